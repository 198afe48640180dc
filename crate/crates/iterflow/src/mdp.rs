//! State model and transition dynamics for the bounded-workspace research loop.
//!
//! A workspace holds exactly three things: the question, the evolving report,
//! and the last tool interaction. Everything older is gone unless the policy
//! wrote it into the report. Transitions are pure and rendering never depends
//! on the round index, so a prompt at round 500 looks exactly like a prompt
//! at round 5 with the same contents.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on report content, in characters.
pub const DEFAULT_REPORT_BUDGET: usize = 16_384;
/// Default cap on tool response payloads, in characters.
pub const DEFAULT_RESPONSE_CAP: usize = 24_576;
/// Appended to any content that was cut to fit a budget.
pub const TRUNCATION_MARKER: &str = "\n[truncated]";

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("transition requires a tool-call action, got an answer")]
    AnswerDoesNotTransition,
    #[error("tool response is for '{response}' but the action called '{action}'")]
    MismatchedTool { action: String, response: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: Option<String>,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_answer: Option<String>,
    ) -> Result<Self, MdpError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(MdpError::EmptyQuestion);
        }
        Ok(Self { id: id.into(), text, gold_answer })
    }
}

/// The policy-written synthesis of findings so far. Content is capped at
/// `char_budget` characters; anything past the cap is cut and marked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub content: String,
    pub round_produced: u32,
    pub char_budget: usize,
}

impl Report {
    pub fn new(content: impl Into<String>, round_produced: u32, char_budget: usize) -> Self {
        let content = enforce_budget(content.into(), char_budget);
        Self { content, round_produced, char_budget }
    }

    pub fn empty(char_budget: usize) -> Self {
        Self { content: String::new(), round_produced: 0, char_budget }
    }

    /// Re-applies a different budget, e.g. when a parsed decision's report
    /// is adopted under the episode's configured cap.
    pub fn rebudget(&self, char_budget: usize) -> Self {
        Self::new(self.content.clone(), self.round_produced, char_budget)
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }
}

/// Truncates `content` to `budget` characters, marking the cut.
pub fn enforce_budget(content: String, budget: usize) -> String {
    let n = content.chars().count();
    if n <= budget {
        return content;
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    let keep = budget.saturating_sub(marker_len);
    let mut out: String = content.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    ToolError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub payload: String,
    pub status: ToolStatus,
    pub elapsed: Duration,
    pub tool_name: String,
}

impl ToolResponse {
    pub fn ok(tool_name: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            payload: payload.into(),
            status: ToolStatus::Ok,
            elapsed: Duration::ZERO,
            tool_name: tool_name.into(),
        }
    }

    pub fn error(tool_name: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            payload: message.into(),
            status: ToolStatus::ToolError,
            elapsed: Duration::ZERO,
            tool_name: tool_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall { name: String, arguments: serde_json::Value },
    Answer { text: String },
}

impl Action {
    pub fn is_answer(&self) -> bool {
        matches!(self, Action::Answer { .. })
    }

    pub fn tool_name(&self) -> Option<&str> {
        match self {
            Action::ToolCall { name, .. } => Some(name),
            Action::Answer { .. } => None,
        }
    }

    /// Canonical text form used in prompts, serialization, and the mono
    /// baseline context. Tool-call JSON has sorted keys, so equal actions
    /// always produce equal text.
    pub fn to_canonical_text(&self) -> String {
        match self {
            Action::ToolCall { name, arguments } => {
                let body = serde_json::json!({ "name": name, "arguments": arguments });
                format!("<tool_call>{}</tool_call>", body)
            }
            Action::Answer { text } => format!("<answer>{}</answer>", text),
        }
    }
}

/// A completed tool call and its response. Answers never become
/// interactions; they terminate the episode instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub action: Action,
    pub tool_response: ToolResponse,
}

impl Interaction {
    pub fn new(action: Action, tool_response: ToolResponse) -> Result<Self, MdpError> {
        if action.is_answer() {
            return Err(MdpError::AnswerDoesNotTransition);
        }
        Ok(Self { action, tool_response })
    }
}

/// The Markovian state: the only thing the policy ever sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub question: Question,
    pub report: Report,
    pub last_interaction: Option<Interaction>,
    pub round: u32,
}

/// One structured policy output: reasoning, the next report, and an action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decision {
    pub think: String,
    pub next_report: Report,
    pub action: Action,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    Forced,
    ContextOverflow,
    Failed,
}

/// Why a trajectory ended with `Termination::Failed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    PolicyUnavailable,
    MalformedDecision,
}

/// One round as the policy experienced it: the exact workspace it saw, the
/// decision it made, and the tool response (absent on the answer round).
/// `workspace` is `None` for mono-baseline rounds, which have no structured
/// state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub workspace: Option<Workspace>,
    pub rendered_chars: usize,
    pub decision: Decision,
    pub tool_response: Option<ToolResponse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: Question,
    pub rollout_id: u32,
    pub template_id: String,
    pub rounds: Vec<RoundRecord>,
    pub termination: Termination,
    pub failure: Option<FailureKind>,
    pub final_answer: String,
}

impl Trajectory {
    pub fn length(&self) -> usize {
        self.rounds.len()
    }

    pub fn question_id(&self) -> &str {
        &self.question.id
    }
}

/// s0 = (q, empty report, no interaction).
pub fn initial_state(question: Question, report_budget: usize) -> Workspace {
    Workspace {
        question,
        report: Report::empty(report_budget),
        last_interaction: None,
        round: 0,
    }
}

/// Deterministic workspace reconstruction: the next state keeps the
/// question, adopts the decision's report, and holds only the latest
/// interaction. Nothing else from the prior state survives.
pub fn transition(
    state: &Workspace,
    decision: &Decision,
    response: &ToolResponse,
) -> Result<Workspace, MdpError> {
    let name = match &decision.action {
        Action::ToolCall { name, .. } => name.clone(),
        Action::Answer { .. } => return Err(MdpError::AnswerDoesNotTransition),
    };
    if response.tool_name != name {
        return Err(MdpError::MismatchedTool { action: name, response: response.tool_name.clone() });
    }
    let round = state.round + 1;
    Ok(Workspace {
        question: state.question.clone(),
        report: Report::new(
            decision.next_report.content.clone(),
            round,
            decision.next_report.char_budget,
        ),
        last_interaction: Some(Interaction::new(decision.action.clone(), response.clone())?),
        round,
    })
}

/// The mono-contextual baseline: append the serialized action and response
/// to the ever-growing context. Output is always strictly longer than input.
pub fn mono_append(context: &str, action: &Action, response: &ToolResponse) -> String {
    format!(
        "{context}\n{}\n<tool_response>\n{}\n</tool_response>\n",
        action.to_canonical_text(),
        response.payload
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Question {
        Question::new("q1", "Who wrote it?", None).unwrap()
    }

    fn decision(report: &str, tool: &str) -> Decision {
        Decision {
            think: "t".into(),
            next_report: Report::new(report, 0, DEFAULT_REPORT_BUDGET),
            action: Action::ToolCall {
                name: tool.into(),
                arguments: serde_json::json!({"query": ["x"]}),
            },
            raw: String::new(),
        }
    }

    #[test]
    fn initial_state_is_round_zero_and_empty() {
        let s = initial_state(q(), DEFAULT_REPORT_BUDGET);
        assert_eq!(s.round, 0);
        assert!(s.report.is_empty());
        assert!(s.last_interaction.is_none());
    }

    #[test]
    fn initial_states_differ_only_in_question() {
        let a = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let b = initial_state(Question::new("q2", "Other?", None).unwrap(), DEFAULT_REPORT_BUDGET);
        assert_eq!(a.report, b.report);
        assert_eq!(a.round, b.round);
        assert_ne!(a.question, b.question);
    }

    #[test]
    fn transition_applies_the_dynamics() {
        let s0 = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let d0 = decision("R1", "google_search");
        let tr0 = ToolResponse::ok("google_search", "results");
        let s1 = transition(&s0, &d0, &tr0).unwrap();
        assert_eq!(s1.round, 1);
        assert_eq!(s1.report.content, "R1");
        let inter = s1.last_interaction.as_ref().unwrap();
        assert_eq!(inter.action, d0.action);
        assert_eq!(inter.tool_response, tr0);
        assert_eq!(s1.question, s0.question);
    }

    #[test]
    fn transition_is_deterministic() {
        let s0 = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let d = decision("R", "google_search");
        let tr = ToolResponse::ok("google_search", "body");
        assert_eq!(transition(&s0, &d, &tr).unwrap(), transition(&s0, &d, &tr).unwrap());
    }

    #[test]
    fn transition_rejects_answers() {
        let s0 = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let d = Decision {
            think: "t".into(),
            next_report: Report::empty(DEFAULT_REPORT_BUDGET),
            action: Action::Answer { text: "42".into() },
            raw: String::new(),
        };
        let tr = ToolResponse::ok("google_search", "body");
        assert!(matches!(transition(&s0, &d, &tr), Err(MdpError::AnswerDoesNotTransition)));
    }

    #[test]
    fn transition_rejects_mismatched_tool() {
        let s0 = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let d = decision("R", "google_search");
        let tr = ToolResponse::ok("Visit", "body");
        assert!(matches!(transition(&s0, &d, &tr), Err(MdpError::MismatchedTool { .. })));
    }

    #[test]
    fn history_is_erased_unless_written_into_report() {
        let s0 = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let d0 = decision("kept finding", "google_search");
        let tr0 = ToolResponse::ok("google_search", "OLD_RESPONSE_MARKER");
        let s1 = transition(&s0, &d0, &tr0).unwrap();
        let d1 = decision("kept finding", "google_search");
        let tr1 = ToolResponse::ok("google_search", "fresh");
        let s2 = transition(&s1, &d1, &tr1).unwrap();
        let serialized = serde_json::to_string(&s2).unwrap();
        assert!(!serialized.contains("OLD_RESPONSE_MARKER"));
        assert!(serialized.contains("kept finding"));
    }

    #[test]
    fn report_budget_truncates_with_marker() {
        let r = Report::new("a".repeat(100), 1, 40);
        assert!(r.content.chars().count() <= 40);
        assert!(r.content.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn mono_append_grows_strictly() {
        let a = Action::ToolCall { name: "google_search".into(), arguments: serde_json::json!({"query":["x"]}) };
        let tr = ToolResponse::ok("google_search", "payload");
        let c1 = mono_append("", &a, &tr);
        assert!(c1.contains("google_search") && c1.contains("payload"));
        let c2 = mono_append(&c1, &a, &tr);
        assert!(c2.len() > c1.len());
        assert!(c2.starts_with(&c1));
    }

    #[test]
    fn mono_growth_is_linear_in_appends() {
        let a = Action::ToolCall { name: "google_search".into(), arguments: serde_json::json!({"query":["x"]}) };
        let tr = ToolResponse::ok("google_search", "y".repeat(100));
        let mut ctx = String::from("q?");
        let mut lens = Vec::new();
        for _ in 0..10 {
            ctx = mono_append(&ctx, &a, &tr);
            lens.push(ctx.len());
        }
        let deltas: Vec<usize> = lens.windows(2).map(|w| w[1] - w[0]).collect();
        // every append adds the same amount: len(a) + len(TR) + separators
        assert!(deltas.iter().all(|&d| d == deltas[0]));
    }
}
