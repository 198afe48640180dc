//! Line-delimited trajectory persistence: one meta record per rollout
//! followed by one record per round. Writers are append-only per rollout
//! stream; with `--compact`, response payloads are replaced by content
//! digests (such stores cannot be re-rendered into corpora).

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{builtin_schemas, parse_decision, ParseOutcome};
use crate::mdp::{
    Action, FailureKind, Interaction, Question, Report, RoundRecord, Termination, ToolResponse,
    ToolStatus, Trajectory, Workspace, DEFAULT_REPORT_BUDGET,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("trajectory store i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory store parse failure: {0}")]
    Parse(String),
    #[error("round {0} stores a digest only; re-run without --compact to rebuild workspaces")]
    CompactOnly(u32),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredLine {
    Meta(StoredMeta),
    Round(StoredRound),
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredMeta {
    question_id: String,
    rollout_id: u32,
    template_id: String,
    question_text: String,
    gold_answer: Option<String>,
    termination: Termination,
    failure: Option<FailureKind>,
    final_answer: String,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredWorkspace {
    report: String,
    last_action: Option<Action>,
    last_response: Option<String>,
    last_response_digest: Option<String>,
    last_response_status: Option<ToolStatus>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredRound {
    question_id: String,
    rollout_id: u32,
    round: u32,
    template_id: String,
    workspace: Option<StoredWorkspace>,
    decision_raw: String,
    action: Action,
    tool_status: Option<ToolStatus>,
    response_payload: Option<String>,
    response_digest: Option<String>,
    rendered_chars: usize,
    elapsed_ms: u64,
}

fn digest(text: &str) -> String {
    format!("sha256:{:x}", Sha256::digest(text.as_bytes()))
}

/// Writes one trajectory as a JSONL stream.
pub fn write_trajectory(
    sink: &mut dyn Write,
    trajectory: &Trajectory,
    compact: bool,
) -> Result<(), StoreError> {
    let meta = StoredLine::Meta(StoredMeta {
        question_id: trajectory.question.id.clone(),
        rollout_id: trajectory.rollout_id,
        template_id: trajectory.template_id.clone(),
        question_text: trajectory.question.text.clone(),
        gold_answer: trajectory.question.gold_answer.clone(),
        termination: trajectory.termination,
        failure: trajectory.failure,
        final_answer: trajectory.final_answer.clone(),
        length: trajectory.length(),
    });
    serde_json::to_writer(&mut *sink, &meta).map_err(|e| StoreError::Parse(e.to_string()))?;
    sink.write_all(b"\n")?;
    for (idx, round) in trajectory.rounds.iter().enumerate() {
        let workspace = round.workspace.as_ref().map(|w| {
            let (action, payload, status) = match &w.last_interaction {
                Some(i) => (
                    Some(i.action.clone()),
                    Some(i.tool_response.payload.clone()),
                    Some(i.tool_response.status),
                ),
                None => (None, None, None),
            };
            StoredWorkspace {
                report: w.report.content.clone(),
                last_action: action,
                last_response_digest: payload.as_deref().map(digest),
                last_response: if compact { None } else { payload },
                last_response_status: status,
            }
        });
        let line = StoredLine::Round(StoredRound {
            question_id: trajectory.question.id.clone(),
            rollout_id: trajectory.rollout_id,
            round: (idx + 1) as u32,
            template_id: trajectory.template_id.clone(),
            workspace,
            decision_raw: round.decision.raw.clone(),
            action: round.decision.action.clone(),
            tool_status: round.tool_response.as_ref().map(|r| r.status),
            response_digest: round.tool_response.as_ref().map(|r| digest(&r.payload)),
            response_payload: if compact {
                None
            } else {
                round.tool_response.as_ref().map(|r| r.payload.clone())
            },
            rendered_chars: round.rendered_chars,
            elapsed_ms: round
                .tool_response
                .as_ref()
                .map(|r| r.elapsed.as_millis() as u64)
                .unwrap_or(0),
        });
        serde_json::to_writer(&mut *sink, &line).map_err(|e| StoreError::Parse(e.to_string()))?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes one trajectory to `<dir>/<question_id>_<rollout_id>.jsonl`.
pub fn write_trajectory_file(
    dir: &Path,
    trajectory: &Trajectory,
    compact: bool,
) -> Result<std::path::PathBuf, StoreError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!(
        "{}_{}.jsonl",
        sanitize(&trajectory.question.id),
        trajectory.rollout_id
    ));
    let file = std::fs::File::create(&path)?;
    let mut writer = BufWriter::new(file);
    write_trajectory(&mut writer, trajectory, compact)?;
    writer.flush()?;
    Ok(path)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Reads one trajectory stream back. Decisions are rebuilt by re-parsing
/// the stored raw output, which is authoritative.
pub fn read_trajectory(source: &mut dyn BufRead) -> Result<Trajectory, StoreError> {
    let mut meta: Option<StoredMeta> = None;
    let mut rounds: Vec<StoredRound> = Vec::new();
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| StoreError::Parse(e.to_string()))? {
            StoredLine::Meta(m) => meta = Some(m),
            StoredLine::Round(r) => rounds.push(r),
        }
    }
    let meta = meta.ok_or_else(|| StoreError::Parse("stream has no meta record".into()))?;
    let question = Question::new(meta.question_id.clone(), meta.question_text, meta.gold_answer)
        .map_err(|e| StoreError::Parse(e.to_string()))?;
    let schemas = builtin_schemas();
    let mut out_rounds = Vec::with_capacity(rounds.len());
    for stored in rounds {
        let workspace = match stored.workspace {
            Some(w) => {
                let last_interaction = match w.last_action {
                    Some(action) => {
                        let payload = match w.last_response {
                            Some(p) => p,
                            None => return Err(StoreError::CompactOnly(stored.round)),
                        };
                        let response = ToolResponse {
                            payload,
                            status: w.last_response_status.unwrap_or(ToolStatus::Ok),
                            elapsed: std::time::Duration::ZERO,
                            tool_name: action.tool_name().unwrap_or_default().to_string(),
                        };
                        Some(
                            Interaction::new(action, response)
                                .map_err(|e| StoreError::Parse(e.to_string()))?,
                        )
                    }
                    None => None,
                };
                Some(Workspace {
                    question: question.clone(),
                    report: Report::new(w.report, stored.round - 1, DEFAULT_REPORT_BUDGET),
                    last_interaction,
                    round: stored.round - 1,
                })
            }
            None => None,
        };
        let decision = match parse_decision(&stored.decision_raw, &schemas) {
            ParseOutcome::Parsed(d) => d,
            ParseOutcome::Malformed { reason, .. } => {
                return Err(StoreError::Parse(format!(
                    "stored decision does not re-parse: {reason}"
                )))
            }
        };
        let tool_response = match (&stored.tool_status, stored.response_payload) {
            (Some(status), Some(payload)) => Some(ToolResponse {
                payload,
                status: *status,
                elapsed: std::time::Duration::from_millis(stored.elapsed_ms),
                tool_name: stored.action.tool_name().unwrap_or_default().to_string(),
            }),
            (Some(_), None) => return Err(StoreError::CompactOnly(stored.round)),
            _ => None,
        };
        out_rounds.push(RoundRecord {
            workspace,
            rendered_chars: stored.rendered_chars,
            decision,
            tool_response,
        });
    }
    Ok(Trajectory {
        question,
        rollout_id: meta.rollout_id,
        template_id: meta.template_id,
        rounds: out_rounds,
        termination: meta.termination,
        failure: meta.failure,
        final_answer: meta.final_answer,
    })
}

/// Loads every `*.jsonl` trajectory under `dir`, sorted by file name.
pub fn read_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>, StoreError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let file = std::fs::File::open(&path)?;
        out.push(read_trajectory(&mut std::io::BufReader::new(file))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{run_episode, EpisodeConfig};
    use crate::policy::StepScriptPolicy;
    use crate::template::default_template;
    use crate::tools::fixture::{FixtureCorpus, FixtureEnv};

    fn trajectory() -> Trajectory {
        let question = Question::new("q-1", "What?", Some("done".into())).unwrap();
        let policy = StepScriptPolicy::new(Some(3), "done");
        let env = FixtureEnv::new(FixtureCorpus::default());
        run_episode(question, &policy, &env, &EpisodeConfig::new(default_template()))
    }

    #[test]
    fn roundtrip_preserves_workspaces_and_outcome() {
        let t = trajectory();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t, false).unwrap();
        let back = read_trajectory(&mut std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back.question, t.question);
        assert_eq!(back.termination, t.termination);
        assert_eq!(back.final_answer, t.final_answer);
        assert_eq!(back.length(), t.length());
        for (a, b) in back.rounds.iter().zip(&t.rounds) {
            assert_eq!(a.workspace.as_ref().unwrap().report, b.workspace.as_ref().unwrap().report);
            assert_eq!(a.decision.raw, b.decision.raw);
            assert_eq!(a.rendered_chars, b.rendered_chars);
        }
    }

    #[test]
    fn compact_store_digests_responses() {
        let t = trajectory();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("sha256:"));
        assert!(matches!(
            read_trajectory(&mut std::io::BufReader::new(buf.as_slice())),
            Err(StoreError::CompactOnly(_))
        ));
    }

    #[test]
    fn directory_roundtrip() {
        let t = trajectory();
        let dir = tempfile::tempdir().unwrap();
        write_trajectory_file(dir.path(), &t, false).unwrap();
        let all = read_trajectory_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].question_id(), "q-1");
    }
}
