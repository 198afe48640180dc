//! Text-generation backends behind a single provider contract.
//!
//! The orchestrator only needs `complete`; implementations must be safe
//! under concurrent calls. `HttpPolicy` speaks the common chat-completion
//! wire shape; the scripted providers exist for hermetic runs and tests.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output: Option<u32>,
    /// Per-rollout sampling seed, when the backend honors one.
    pub seed: Option<u64>,
}

impl PolicyRequest {
    pub fn from_prompt(prompt: impl Into<String>, temperature: f64, seed: Option<u64>) -> Self {
        Self {
            messages: vec![Message { role: "user".into(), content: prompt.into() }],
            temperature,
            max_output: None,
            seed,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub content: String,
    pub token_usage: Option<u64>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol failure: {0}")]
    Protocol(String),
}

pub trait PolicyProvider: Send + Sync {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyResponse, PolicyError>;
}

/// Chat-completion HTTP backend (OpenAI-compatible wire shape).
pub struct HttpPolicy {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    retries: u32,
}

impl HttpPolicy {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("http client"),
            retries: 2,
        }
    }
}

impl PolicyProvider for HttpPolicy {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_output {
            body["max_tokens"] = max.into();
        }
        if let Some(seed) = request.seed {
            body["seed"] = seed.into();
        }
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << (attempt - 1)));
            }
            let mut req = self.client.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let value: serde_json::Value = resp
                        .json()
                        .map_err(|e| PolicyError::Protocol(e.to_string()))?;
                    if !status.is_success() {
                        return Err(PolicyError::Protocol(format!("{status}: {value}")));
                    }
                    let content = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            PolicyError::Protocol("response carries no message content".into())
                        })?
                        .to_string();
                    let token_usage = value["usage"]["total_tokens"].as_u64();
                    return Ok(PolicyResponse { content, token_usage });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(PolicyError::Transport(last_err))
    }
}

/// Replays a fixed sequence of raw outputs, cycling when exhausted.
pub struct ReplayPolicy {
    outputs: Vec<String>,
    cursor: Mutex<usize>,
}

impl ReplayPolicy {
    pub fn new(outputs: Vec<String>) -> Self {
        Self { outputs, cursor: Mutex::new(0) }
    }

    pub fn reset(&self) {
        *self.cursor.lock().unwrap() = 0;
    }
}

impl PolicyProvider for ReplayPolicy {
    fn complete(&self, _request: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if self.outputs.is_empty() {
            return Err(PolicyError::Protocol("replay script is empty".into()));
        }
        let mut cursor = self.cursor.lock().unwrap();
        let out = self.outputs[*cursor % self.outputs.len()].clone();
        *cursor += 1;
        Ok(PolicyResponse { content: out, token_usage: None })
    }
}

/// Deterministic position-agnostic policy for fixtures: decides purely from
/// the prompt content. It tracks progress through a `progress=N` marker it
/// writes into its own report (or, in the mono baseline, by counting
/// appended tool responses), issues `tool_rounds` search calls, then
/// answers. `tool_rounds = None` never answers.
pub struct StepScriptPolicy {
    pub tool_rounds: Option<usize>,
    pub answer: String,
    pub query: String,
    /// Pad the report to this many characters so prompt sizes stay flat.
    pub report_fill: usize,
}

impl StepScriptPolicy {
    pub fn new(tool_rounds: Option<usize>, answer: impl Into<String>) -> Self {
        Self {
            tool_rounds,
            answer: answer.into(),
            query: "probe".into(),
            report_fill: 64,
        }
    }

    fn progress(prompt: &str) -> usize {
        if let Some(pos) = prompt.rfind("progress=") {
            let digits: String = prompt[pos + "progress=".len()..]
                .chars()
                .take_while(|c| c.is_ascii_digit())
                .collect();
            if let Ok(n) = digits.parse() {
                return n;
            }
        }
        prompt.matches("<tool_response>").count()
    }
}

impl PolicyProvider for StepScriptPolicy {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        let done = Self::progress(request.prompt());
        let content = match self.tool_rounds {
            Some(n) if done >= n => format!(
                "<think>enough gathered</think>\n<report>progress={done}</report>\n<answer>{}</answer>",
                self.answer
            ),
            _ => {
                let mut report = format!("progress={}", done + 1);
                while report.chars().count() < self.report_fill {
                    report.push('x');
                }
                format!(
                    "<think>keep looking</think>\n<report>{report}</report>\n<tool_call>{{\"name\":\"google_search\",\"arguments\":{{\"query\":[\"{}\"]}}}}</tool_call>",
                    self.query
                )
            }
        };
        Ok(PolicyResponse { content, token_usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_cycles_in_order() {
        let p = ReplayPolicy::new(vec!["a".into(), "b".into()]);
        let req = PolicyRequest::from_prompt("x", 0.0, None);
        assert_eq!(p.complete(&req).unwrap().content, "a");
        assert_eq!(p.complete(&req).unwrap().content, "b");
        assert_eq!(p.complete(&req).unwrap().content, "a");
        p.reset();
        assert_eq!(p.complete(&req).unwrap().content, "a");
    }

    #[test]
    fn step_script_counts_progress_from_prompt() {
        let p = StepScriptPolicy::new(Some(2), "done");
        let r0 = p.complete(&PolicyRequest::from_prompt("(no findings yet)", 0.0, None)).unwrap();
        assert!(r0.content.contains("progress=1"));
        assert!(r0.content.contains("tool_call"));
        let r2 = p.complete(&PolicyRequest::from_prompt("report: progress=2xxx", 0.0, None)).unwrap();
        assert!(r2.content.contains("<answer>done</answer>"));
    }
}
