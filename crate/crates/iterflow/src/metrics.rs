//! Complexity accounting, run summaries, and the interaction-scaling
//! harness. Sizes are measured in characters so the accounting stays
//! backend-agnostic.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::eapo::{EapoError, Judge};
use crate::mdp::{Question, Termination, Trajectory};
use crate::orchestrator::{run_episode, EpisodeConfig, Paradigm};
use crate::policy::PolicyProvider;
use crate::tools::ToolEnvironment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub round: u32,
    pub rendered_context_chars: usize,
    pub report_chars: usize,
    pub response_chars: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityLedger {
    pub rows: Vec<LedgerRow>,
    pub context_limit: usize,
    pub paradigm: String,
    /// First round at which a mono-contextual run of the same script would
    /// exceed the context limit, if any.
    pub mono_overflow_round: Option<u32>,
}

impl ComplexityLedger {
    pub fn max_rendered(&self) -> usize {
        self.rows.iter().map(|r| r.rendered_context_chars).max().unwrap_or(0)
    }

    pub fn min_rendered(&self) -> usize {
        self.rows.iter().map(|r| r.rendered_context_chars).min().unwrap_or(0)
    }
}

/// Builds the per-round complexity ledger from a trajectory's snapshots and
/// flags where the equivalent mono run would overflow `context_limit`.
pub fn account(trajectory: &Trajectory, context_limit: usize) -> ComplexityLedger {
    let mut rows = Vec::with_capacity(trajectory.length());
    let mut mono_cumulative = trajectory.question.text.chars().count();
    let mut mono_overflow_round = None;
    for (idx, round) in trajectory.rounds.iter().enumerate() {
        let report_chars = round
            .workspace
            .as_ref()
            .map(|w| w.report.content.chars().count())
            .unwrap_or(0);
        let response_chars = round
            .tool_response
            .as_ref()
            .map(|r| r.payload.chars().count())
            .unwrap_or(0);
        rows.push(LedgerRow {
            round: (idx + 1) as u32,
            rendered_context_chars: round.rendered_chars,
            report_chars,
            response_chars,
        });
        mono_cumulative += round.decision.action.to_canonical_text().chars().count()
            + response_chars;
        if mono_overflow_round.is_none() && mono_cumulative > context_limit {
            mono_overflow_round = Some((idx + 1) as u32);
        }
    }
    let paradigm = if trajectory.rounds.iter().all(|r| r.workspace.is_some()) {
        "iterative"
    } else {
        "mono"
    };
    ComplexityLedger { rows, context_limit, paradigm: paradigm.into(), mono_overflow_round }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub accuracy: f64,
    pub avg_turns: f64,
    pub termination_histogram: Vec<(String, usize)>,
    pub avg_rendered_chars: f64,
}

/// Aggregate statistics over judged trajectories.
pub fn summarize_run(trajectories: &[Trajectory], correct: &[bool]) -> RunSummary {
    assert_eq!(trajectories.len(), correct.len(), "every trajectory must be judged");
    let n = trajectories.len();
    if n == 0 {
        return RunSummary {
            accuracy: 0.0,
            avg_turns: 0.0,
            termination_histogram: Vec::new(),
            avg_rendered_chars: 0.0,
        };
    }
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    let avg_turns = trajectories.iter().map(|t| t.length() as f64).sum::<f64>() / n as f64;
    let mut histogram = std::collections::BTreeMap::new();
    for t in trajectories {
        let key = match t.termination {
            Termination::Answered => "answered",
            Termination::Forced => "forced",
            Termination::ContextOverflow => "context_overflow",
            Termination::Failed => "failed",
        };
        *histogram.entry(key.to_string()).or_insert(0usize) += 1;
    }
    let total_rounds: usize = trajectories.iter().map(Trajectory::length).sum();
    let avg_rendered_chars = if total_rounds == 0 {
        0.0
    } else {
        trajectories
            .iter()
            .flat_map(|t| t.rounds.iter())
            .map(|r| r.rendered_chars as f64)
            .sum::<f64>()
            / total_rounds as f64
    };
    RunSummary { accuracy, avg_turns, termination_histogram: histogram.into_iter().collect(), avg_rendered_chars }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub t_max: u32,
    pub accuracy: f64,
    pub average_turns: f64,
}

/// Runs the question set at each round budget and reports accuracy and
/// average turns. Per-question failures count as incorrect; they never
/// abort the sweep. Questions are spread over a bounded worker pool.
pub fn scaling_sweep(
    questions: &[Question],
    policy: &dyn PolicyProvider,
    env: &dyn ToolEnvironment,
    t_max_list: &[u32],
    base_cfg: &EpisodeConfig,
    judge: &Judge,
    workers: usize,
) -> Result<Vec<ScalingResult>, EapoError> {
    assert!(!t_max_list.is_empty(), "t_max_list must be non-empty");
    assert!(t_max_list.windows(2).all(|w| w[0] < w[1]), "t_max_list must be ascending");
    let mut results = Vec::with_capacity(t_max_list.len());
    for &t_max in t_max_list {
        let mut cfg = base_cfg.clone();
        cfg.t_max = t_max;
        cfg.paradigm = Paradigm::Iterative;
        let outcomes: Mutex<Vec<Option<(bool, usize)>>> =
            Mutex::new(vec![None; questions.len()]);
        let next: Mutex<usize> = Mutex::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(questions.len().max(1)) {
                scope.spawn(|| loop {
                    let idx = {
                        let mut n = next.lock().unwrap();
                        if *n >= questions.len() {
                            return;
                        }
                        let i = *n;
                        *n += 1;
                        i
                    };
                    let question = questions[idx].clone();
                    let trajectory = run_episode(question.clone(), policy, env, &cfg);
                    let correct = match question.gold_answer.as_deref() {
                        Some(gold) => judge
                            .verdict(&question.text, &trajectory.final_answer, gold)
                            .unwrap_or(false),
                        None => false,
                    };
                    outcomes.lock().unwrap()[idx] = Some((correct, trajectory.length()));
                });
            }
        });
        let outcomes = outcomes.into_inner().unwrap();
        let n = outcomes.len().max(1);
        let accuracy =
            outcomes.iter().filter(|o| matches!(o, Some((true, _)))).count() as f64 / n as f64;
        let average_turns = outcomes
            .iter()
            .map(|o| o.map(|(_, len)| len as f64).unwrap_or(0.0))
            .sum::<f64>()
            / n as f64;
        results.push(ScalingResult { t_max, accuracy, average_turns });
    }
    Ok(results)
}
