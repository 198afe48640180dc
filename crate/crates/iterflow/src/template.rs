//! Versioned prompt templates and workspace rendering.
//!
//! A template is data, not code: five named slots rendered in a fixed order.
//! The template id is stamped into every trajectory record so corpora stay
//! reproducible. Rendering never looks at the round index — identical
//! workspace contents produce byte-identical prompts at any depth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::builtin_schemas;
use crate::mdp::Workspace;

/// Placeholder substituted with slot content when rendering.
pub const SLOT_VALUE: &str = "{value}";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("failed to read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse template file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown template id '{0}'")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    /// System instructions, including the tool schema block. No slot.
    pub system: String,
    /// Each of the following contains `{value}` exactly once.
    pub question: String,
    pub report: String,
    pub last_action: String,
    pub last_response: String,
    /// Shown in the report slot at round 0.
    pub empty_report_marker: String,
    /// Shown in the interaction slots at round 0, so the document structure
    /// is stable from the first round.
    pub no_interaction_marker: String,
}

impl PromptTemplate {
    pub fn from_file(path: &std::path::Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Characters contributed by the template itself, independent of the
    /// workspace contents.
    pub fn overhead(&self) -> usize {
        let slot = |s: &str| s.chars().count().saturating_sub(SLOT_VALUE.len());
        self.system.chars().count()
            + slot(&self.question)
            + slot(&self.report)
            + slot(&self.last_action)
            + slot(&self.last_response)
            + self.empty_report_marker.chars().count().max(0)
            + self.no_interaction_marker.chars().count() * 2
    }
}

/// The shipped default template. Version `default-v1`.
pub fn default_template() -> PromptTemplate {
    let schema_block = builtin_schemas()
        .iter()
        .map(|s| s.to_json().to_string())
        .collect::<Vec<_>>()
        .join("\n");
    PromptTemplate {
        id: "default-v1".to_string(),
        system: format!(
            "You are a research agent. Each round you see your workspace: the question, \
             your evolving report of findings so far, and your last tool interaction. \
             Respond with exactly three sections: <think>your reasoning</think>, \
             <report>the full updated report, rewritten to carry everything worth keeping</report>, \
             and exactly one action: either <tool_call>{{\"name\": ..., \"arguments\": ...}}</tool_call> \
             or <answer>final answer</answer>.\n\nAvailable tools:\n{schema_block}\n\n"
        ),
        question: "## Question\n{value}\n\n".to_string(),
        report: "## Report\n{value}\n\n".to_string(),
        last_action: "## Last action\n{value}\n\n".to_string(),
        last_response: "## Last tool response\n{value}\n".to_string(),
        empty_report_marker: "(no findings yet)".to_string(),
        no_interaction_marker: "(none yet)".to_string(),
    }
}

/// Resolves a template id to a template: the built-in id, or a path to a
/// template file.
pub fn resolve_template(id_or_path: &str) -> Result<PromptTemplate, TemplateError> {
    if id_or_path == "default-v1" {
        return Ok(default_template());
    }
    let path = std::path::Path::new(id_or_path);
    if path.exists() {
        return PromptTemplate::from_file(path);
    }
    Err(TemplateError::Unknown(id_or_path.to_string()))
}

fn fill(slot: &str, value: &str) -> String {
    slot.replacen(SLOT_VALUE, value, 1)
}

/// Renders a workspace into the policy prompt. Pure; bounded by
/// `overhead + |question| + report budget + response cap`.
pub fn render_workspace(state: &Workspace, template: &PromptTemplate) -> String {
    let mut out = String::with_capacity(template.system.len() + 1024);
    out.push_str(&template.system);
    out.push_str(&fill(&template.question, &state.question.text));
    let report = if state.report.is_empty() {
        template.empty_report_marker.as_str()
    } else {
        state.report.content.as_str()
    };
    out.push_str(&fill(&template.report, report));
    match &state.last_interaction {
        Some(inter) => {
            out.push_str(&fill(&template.last_action, &inter.action.to_canonical_text()));
            out.push_str(&fill(&template.last_response, &inter.tool_response.payload));
        }
        None => {
            out.push_str(&fill(&template.last_action, &template.no_interaction_marker));
            out.push_str(&fill(&template.last_response, &template.no_interaction_marker));
        }
    }
    out
}

/// Initial context for the mono baseline: system instructions plus the
/// question. Growth happens via `mono_append`.
pub fn render_mono_prologue(question_text: &str, template: &PromptTemplate) -> String {
    let mut out = String::new();
    out.push_str(&template.system);
    out.push_str(&fill(&template.question, question_text));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        initial_state, transition, Action, Decision, Question, Report, ToolResponse,
        DEFAULT_REPORT_BUDGET,
    };

    fn q() -> Question {
        Question::new("q1", "Who discovered it?", None).unwrap()
    }

    #[test]
    fn round_zero_prompt_has_markers_and_question() {
        let t = default_template();
        let s = initial_state(q(), DEFAULT_REPORT_BUDGET);
        let prompt = render_workspace(&s, &t);
        assert!(prompt.contains("Who discovered it?"));
        assert!(prompt.contains(&t.empty_report_marker));
        assert!(prompt.contains(&t.no_interaction_marker));
    }

    #[test]
    fn identical_contents_render_identically_regardless_of_round() {
        let t = default_template();
        let mk = |round: u32| Workspace {
            question: q(),
            report: Report::new("findings", round, DEFAULT_REPORT_BUDGET),
            last_interaction: Some(
                crate::mdp::Interaction::new(
                    Action::ToolCall {
                        name: "google_search".into(),
                        arguments: serde_json::json!({"query": ["x"]}),
                    },
                    ToolResponse::ok("google_search", "body"),
                )
                .unwrap(),
            ),
            round,
        };
        assert_eq!(render_workspace(&mk(5), &t), render_workspace(&mk(500), &t));
    }

    #[test]
    fn rendered_length_respects_budgets() {
        let t = default_template();
        let budget = 10_240;
        let cap = 8_192;
        let s0 = initial_state(q(), budget);
        let d = Decision {
            think: "t".into(),
            next_report: Report::new("r".repeat(20_000), 0, budget),
            action: Action::ToolCall {
                name: "google_search".into(),
                arguments: serde_json::json!({"query": ["x"]}),
            },
            raw: String::new(),
        };
        let tr = ToolResponse::ok("google_search", crate::mdp::enforce_budget("y".repeat(20_000), cap));
        let s1 = transition(&s0, &d, &tr).unwrap();
        let prompt = render_workspace(&s1, &t);
        let bound = t.overhead()
            + s1.question.text.chars().count()
            + budget
            + cap
            + s1.last_interaction.as_ref().unwrap().action.to_canonical_text().chars().count();
        assert!(prompt.chars().count() <= bound);
    }

    #[test]
    fn template_file_roundtrip() {
        let t = default_template();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tpl.toml");
        std::fs::write(&path, toml::to_string(&t).unwrap()).unwrap();
        let loaded = PromptTemplate::from_file(&path).unwrap();
        assert_eq!(loaded, t);
    }
}
