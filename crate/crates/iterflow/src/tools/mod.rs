//! The tool environment: four tools behind one dispatch surface.
//!
//! All failure modes collapse into the three response statuses; callers
//! never see transport-level errors. Every payload is capped before it
//! leaves the environment, so the workspace boundedness invariant holds
//! even against hostile pages.

pub mod fixture;
pub mod live;
pub mod python;

use std::time::Duration;

use serde_json::Value;

use crate::mdp::{enforce_budget, ToolResponse};

/// A schema-validated tool invocation.
#[derive(Debug, Clone)]
pub struct ToolRequest {
    pub name: String,
    pub arguments: Value,
    pub deadline: Duration,
}

impl ToolRequest {
    pub fn new(name: impl Into<String>, arguments: Value, deadline: Duration) -> Self {
        Self { name: name.into(), arguments, deadline }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchBackend {
    Web,
    Scholar,
}

pub trait ToolEnvironment: Send + Sync {
    fn dispatch(&self, request: &ToolRequest) -> ToolResponse;
    fn response_cap(&self) -> usize;
}

/// Applies the response cap and stamps the tool name.
pub(crate) fn finalize(mut response: ToolResponse, name: &str, cap: usize) -> ToolResponse {
    response.payload = enforce_budget(response.payload, cap);
    response.tool_name = name.to_string();
    response
}

pub(crate) fn string_array(args: &Value, key: &str) -> Vec<String> {
    args[key]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default()
}
