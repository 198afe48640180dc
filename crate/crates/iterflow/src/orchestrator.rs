//! The round loop: decide, terminate-or-execute, reconstruct.
//!
//! One episode is strictly sequential; distinct episodes may run
//! concurrently because providers and environments are required to be safe
//! under concurrent calls. Backend failures never panic the loop — they
//! terminate the episode with a diagnostic trajectory.

use std::time::Duration;

use crate::codec::{builtin_schemas, parse_decision, ParseOutcome};
use crate::mdp::{
    initial_state, mono_append, transition, Action, Decision, FailureKind, Question, RoundRecord,
    Termination, ToolResponse, Trajectory, DEFAULT_REPORT_BUDGET,
};
use crate::policy::{PolicyError, PolicyProvider, PolicyRequest};
use crate::template::{render_mono_prologue, render_workspace, PromptTemplate};
use crate::tools::{ToolEnvironment, ToolRequest};

pub const FORCED_TERMINATION_MARKER: &str = "[forced-termination]";
pub const OVERFLOW_MARKER: &str = "[context-overflow]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    Iterative,
    Mono,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub t_max: u32,
    pub paradigm: Paradigm,
    pub retry_limit: u32,
    pub template: PromptTemplate,
    pub seed: u64,
    pub temperature: f64,
    pub report_budget: usize,
    /// Context limit for the mono baseline, in characters.
    pub context_limit: usize,
    pub tool_deadline: Duration,
}

impl EpisodeConfig {
    pub fn new(template: PromptTemplate) -> Self {
        Self {
            t_max: 32,
            paradigm: Paradigm::Iterative,
            retry_limit: 2,
            template,
            seed: 0,
            temperature: 0.7,
            report_budget: DEFAULT_REPORT_BUDGET,
            context_limit: 160_000,
            tool_deadline: Duration::from_secs(60),
        }
    }

    pub fn with_t_max(mut self, t_max: u32) -> Self {
        assert!(t_max >= 1, "t_max must be at least 1");
        self.t_max = t_max;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub question: Question,
    pub g: u32,
    pub trajectories: Vec<Trajectory>,
}

enum DecisionOutcome {
    Decided(Decision),
    Failed(FailureKind, String),
}

/// Calls the policy and parses the output, retrying recoverable parse
/// failures with the error appended as a correction hint.
fn decide(
    policy: &dyn PolicyProvider,
    prompt: &str,
    cfg: &EpisodeConfig,
    seed: u64,
) -> DecisionOutcome {
    let schemas = builtin_schemas();
    let mut hint: Option<String> = None;
    for _attempt in 0..=cfg.retry_limit {
        let full_prompt = match &hint {
            Some(h) => format!(
                "{prompt}\n\nYour previous output was malformed: {h}. \
                 Re-emit the full decision with <think>, <report>, and exactly one action."
            ),
            None => prompt.to_string(),
        };
        let request = PolicyRequest::from_prompt(full_prompt, cfg.temperature, Some(seed));
        let raw = match policy.complete(&request) {
            Ok(resp) => resp.content,
            Err(PolicyError::Transport(e)) | Err(PolicyError::Protocol(e)) => {
                if hint.is_none() {
                    // one immediate retry for flaky transports
                    hint = Some(format!("(backend error: {e})"));
                    continue;
                }
                return DecisionOutcome::Failed(FailureKind::PolicyUnavailable, e);
            }
        };
        match parse_decision(&raw, &schemas) {
            ParseOutcome::Parsed(mut d) => {
                d.next_report = d.next_report.rebudget(cfg.report_budget);
                return DecisionOutcome::Decided(d);
            }
            ParseOutcome::Malformed { reason, recoverable, .. } => {
                if !recoverable {
                    return DecisionOutcome::Failed(
                        FailureKind::MalformedDecision,
                        reason.to_string(),
                    );
                }
                hint = Some(reason.to_string());
            }
        }
    }
    DecisionOutcome::Failed(
        FailureKind::MalformedDecision,
        hint.unwrap_or_else(|| "retries exhausted".into()),
    )
}

fn failed_trajectory(
    question: Question,
    rollout_id: u32,
    template_id: String,
    rounds: Vec<RoundRecord>,
    kind: FailureKind,
    diagnostic: String,
) -> Trajectory {
    Trajectory {
        question,
        rollout_id,
        template_id,
        rounds,
        termination: Termination::Failed,
        failure: Some(kind),
        final_answer: format!("[failed: {diagnostic}]"),
    }
}

/// Runs one bounded-workspace research episode.
pub fn run_episode(
    question: Question,
    policy: &dyn PolicyProvider,
    env: &dyn ToolEnvironment,
    cfg: &EpisodeConfig,
) -> Trajectory {
    run_episode_seeded(question, policy, env, cfg, 0)
}

fn run_episode_seeded(
    question: Question,
    policy: &dyn PolicyProvider,
    env: &dyn ToolEnvironment,
    cfg: &EpisodeConfig,
    rollout_id: u32,
) -> Trajectory {
    let seed = derive_seed(cfg.seed, rollout_id);
    let mut state = initial_state(question.clone(), cfg.report_budget);
    let mut rounds: Vec<RoundRecord> = Vec::new();

    for _t in 0..cfg.t_max {
        let prompt = render_workspace(&state, &cfg.template);
        let rendered_chars = prompt.chars().count();
        let decision = match decide(policy, &prompt, cfg, seed) {
            DecisionOutcome::Decided(d) => d,
            DecisionOutcome::Failed(kind, diag) => {
                return failed_trajectory(
                    question,
                    rollout_id,
                    cfg.template.id.clone(),
                    rounds,
                    kind,
                    diag,
                )
            }
        };
        match &decision.action {
            Action::Answer { text } => {
                let final_answer = text.clone();
                rounds.push(RoundRecord {
                    workspace: Some(state),
                    rendered_chars,
                    decision,
                    tool_response: None,
                });
                return Trajectory {
                    question,
                    rollout_id,
                    template_id: cfg.template.id.clone(),
                    rounds,
                    termination: Termination::Answered,
                    failure: None,
                    final_answer,
                };
            }
            Action::ToolCall { name, arguments } => {
                let request =
                    ToolRequest::new(name.clone(), arguments.clone(), cfg.tool_deadline);
                let response: ToolResponse = env.dispatch(&request);
                let next = transition(&state, &decision, &response)
                    .expect("tool-call decisions always transition");
                rounds.push(RoundRecord {
                    workspace: Some(state),
                    rendered_chars,
                    decision,
                    tool_response: Some(response),
                });
                state = next;
            }
        }
    }

    // T_max reached without an answer: the report is the best available
    // synthesis, so it becomes the forced answer.
    let final_answer = format!("{FORCED_TERMINATION_MARKER} {}", state.report.content);
    Trajectory {
        question,
        rollout_id,
        template_id: cfg.template.id.clone(),
        rounds,
        termination: Termination::Forced,
        failure: None,
        final_answer,
    }
}

/// The mono-contextual baseline loop: same decision grammar, but state is
/// the ever-growing appended context, and the episode additionally ends
/// with `ContextOverflow` once the context exceeds the configured limit.
pub fn run_mono_episode(
    question: Question,
    policy: &dyn PolicyProvider,
    env: &dyn ToolEnvironment,
    cfg: &EpisodeConfig,
) -> Trajectory {
    let seed = derive_seed(cfg.seed, 0);
    let mut context = render_mono_prologue(&question.text, &cfg.template);
    let mut rounds: Vec<RoundRecord> = Vec::new();

    for _t in 0..cfg.t_max {
        let rendered_chars = context.chars().count();
        let decision = match decide(policy, &context, cfg, seed) {
            DecisionOutcome::Decided(d) => d,
            DecisionOutcome::Failed(kind, diag) => {
                return failed_trajectory(
                    question,
                    0,
                    cfg.template.id.clone(),
                    rounds,
                    kind,
                    diag,
                )
            }
        };
        match &decision.action {
            Action::Answer { text } => {
                let final_answer = text.clone();
                rounds.push(RoundRecord {
                    workspace: None,
                    rendered_chars,
                    decision,
                    tool_response: None,
                });
                return Trajectory {
                    question,
                    rollout_id: 0,
                    template_id: cfg.template.id.clone(),
                    rounds,
                    termination: Termination::Answered,
                    failure: None,
                    final_answer,
                };
            }
            Action::ToolCall { name, arguments } => {
                let request =
                    ToolRequest::new(name.clone(), arguments.clone(), cfg.tool_deadline);
                let response = env.dispatch(&request);
                context = mono_append(&context, &decision.action, &response);
                rounds.push(RoundRecord {
                    workspace: None,
                    rendered_chars,
                    decision,
                    tool_response: Some(response),
                });
                if context.chars().count() > cfg.context_limit {
                    return Trajectory {
                        question,
                        rollout_id: 0,
                        template_id: cfg.template.id.clone(),
                        rounds,
                        termination: Termination::ContextOverflow,
                        failure: None,
                        final_answer: OVERFLOW_MARKER.to_string(),
                    };
                }
            }
        }
    }

    Trajectory {
        question: question.clone(),
        rollout_id: 0,
        template_id: cfg.template.id.clone(),
        rounds,
        termination: Termination::Forced,
        failure: None,
        final_answer: FORCED_TERMINATION_MARKER.to_string(),
    }
}

fn derive_seed(seed: u64, rollout_id: u32) -> u64 {
    // splitmix64 over (seed, index) for independent per-rollout streams
    let mut z = seed ^ (u64::from(rollout_id).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs G independent rollouts of one question. Failures in one rollout
/// never cancel siblings; output order is stable by rollout index.
pub fn run_rollouts(
    question: Question,
    policy: &dyn PolicyProvider,
    env: &dyn ToolEnvironment,
    cfg: &EpisodeConfig,
    g: u32,
) -> RolloutBatch {
    assert!(g >= 1, "G must be at least 1");
    let trajectories = (0..g)
        .map(|i| run_episode_seeded(question.clone(), policy, env, cfg, i))
        .collect();
    RolloutBatch { question, g, trajectories }
}
