//! Live tool backends: a search-results API, a page-reader service, and a
//! code-sandbox service, each behind a small client with retry/backoff and
//! a per-call deadline.
//!
//! Retries apply to transport errors only — tool-level failures come back
//! as responses, and code execution is never retried. Visit summaries are
//! produced by a summarizer backend, which is just another policy provider
//! with its own template.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{finalize, string_array, SearchBackend, ToolEnvironment, ToolRequest};
use crate::codec::{TOOL_GOOGLE_SCHOLAR, TOOL_GOOGLE_SEARCH, TOOL_PYTHON, TOOL_VISIT};
use crate::mdp::{ToolResponse, ToolStatus, DEFAULT_RESPONSE_CAP};
use crate::policy::{PolicyProvider, PolicyRequest};

pub const ENV_SEARCH_KEY: &str = "ITERFLOW_SEARCH_KEY";
pub const ENV_READER_KEY: &str = "ITERFLOW_READER_KEY";
pub const ENV_SANDBOX_URL: &str = "ITERFLOW_SANDBOX_URL";

const RETRIES: u32 = 2;
const BACKOFF_BASE_MS: u64 = 250;

fn with_retries<T>(
    mut call: impl FnMut() -> Result<T, String>,
) -> Result<T, String> {
    let mut last = String::new();
    for attempt in 0..=RETRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
        }
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Deserialize)]
struct WireSearchResult {
    title: String,
    url: String,
    #[serde(default)]
    snippet: String,
}

#[derive(Debug, Deserialize)]
struct WireSearchResponse {
    #[serde(default)]
    results: Vec<WireSearchResult>,
}

pub struct SearchClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl SearchClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self { endpoint: endpoint.into(), api_key, client: reqwest::blocking::Client::new() }
    }

    pub fn search(
        &self,
        query: &str,
        backend: SearchBackend,
        deadline: Duration,
    ) -> Result<Vec<(String, String, String)>, String> {
        let engine = match backend {
            SearchBackend::Web => "google",
            SearchBackend::Scholar => "google_scholar",
        };
        let body = with_retries(|| {
            let mut req = self
                .client
                .get(&self.endpoint)
                .timeout(deadline)
                .query(&[("q", query), ("engine", engine)]);
            if let Some(key) = &self.api_key {
                req = req.query(&[("api_key", key.as_str())]);
            }
            let resp = req.send().map_err(|e| e.to_string())?;
            if resp.status().is_server_error() {
                return Err(format!("server error: {}", resp.status()));
            }
            resp.text().map_err(|e| e.to_string())
        })?;
        let parsed: WireSearchResponse = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        Ok(parsed
            .results
            .into_iter()
            .map(|r| (r.title, r.url, r.snippet))
            .collect())
    }
}

pub struct ReaderClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl ReaderClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self { endpoint: endpoint.into(), api_key, client: reqwest::blocking::Client::new() }
    }

    /// Fetches the extracted text of a page through the reader service.
    pub fn read(&self, url: &str, parse_type: &str, deadline: Duration) -> Result<String, String> {
        with_retries(|| {
            let mut req = self
                .client
                .get(format!("{}/{}", self.endpoint.trim_end_matches('/'), url))
                .timeout(deadline)
                .header("x-respond-with", if parse_type == "pdf" { "pdf" } else { "text" });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("reader error: {}", resp.status()));
            }
            resp.text().map_err(|e| e.to_string())
        })
    }
}

#[derive(Debug, Deserialize)]
struct WireSandboxResponse {
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    stderr: String,
    #[serde(default)]
    exit: i32,
}

pub struct SandboxClient {
    pub endpoint: String,
    client: reqwest::blocking::Client,
}

impl SandboxClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), client: reqwest::blocking::Client::new() }
    }

    /// Code execution is not idempotent, so this issues exactly one attempt.
    pub fn execute(&self, code: &str, deadline: Duration) -> Result<(String, String, i32), String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .timeout(deadline)
            .json(&serde_json::json!({ "code": code, "timeout": deadline.as_secs() }))
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("sandbox error: {}", resp.status()));
        }
        let parsed: WireSandboxResponse = resp.json().map_err(|e| e.to_string())?;
        Ok((parsed.stdout, parsed.stderr, parsed.exit))
    }
}

pub struct LiveEnv {
    pub search: SearchClient,
    pub reader: ReaderClient,
    pub sandbox: SandboxClient,
    /// Summarizer backend for goal-conditioned visit summaries.
    pub summarizer: Arc<dyn PolicyProvider>,
    pub response_cap: usize,
}

impl LiveEnv {
    pub fn new(
        search: SearchClient,
        reader: ReaderClient,
        sandbox: SandboxClient,
        summarizer: Arc<dyn PolicyProvider>,
    ) -> Self {
        Self { search, reader, sandbox, summarizer, response_cap: DEFAULT_RESPONSE_CAP }
    }

    fn do_search(&self, queries: &[String], backend: SearchBackend, deadline: Duration) -> ToolResponse {
        let tool = match backend {
            SearchBackend::Web => TOOL_GOOGLE_SEARCH,
            SearchBackend::Scholar => TOOL_GOOGLE_SCHOLAR,
        };
        let mut payload = String::new();
        let mut partial = false;
        let mut any_ok = false;
        for q in queries {
            payload.push_str(&format!("Results for \"{q}\":\n"));
            match self.search.search(q, backend, deadline) {
                Ok(results) if !results.is_empty() => {
                    any_ok = true;
                    for (i, (title, url, snippet)) in
                        results.iter().take(super::fixture::TOP_K).enumerate()
                    {
                        payload.push_str(&format!("{}. {title}\n   {url}\n   {snippet}\n", i + 1));
                    }
                }
                Ok(_) => {
                    any_ok = true;
                    payload.push_str("no results\n");
                }
                Err(e) => {
                    partial = true;
                    payload.push_str(&format!("error: {e}\n"));
                }
            }
            payload.push('\n');
        }
        let status = if any_ok {
            if partial { ToolStatus::Timeout } else { ToolStatus::Ok }
        } else {
            ToolStatus::ToolError
        };
        ToolResponse { payload, status, elapsed: Duration::ZERO, tool_name: tool.into() }
    }

    fn do_visit(&self, urls: &[String], goal: &str, parse_type: &str, deadline: Duration) -> ToolResponse {
        let mut payload = String::new();
        let mut successes = 0usize;
        for url in urls {
            payload.push_str(&format!("URL: {url}\n"));
            match self.reader.read(url, parse_type, deadline) {
                Ok(page) => {
                    let prompt = format!(
                        "Summarize the following page content with respect to this goal.\n\
                         Goal: {goal}\n\nContent:\n{page}"
                    );
                    match self.summarizer.complete(&PolicyRequest::from_prompt(prompt, 0.0, None)) {
                        Ok(resp) => {
                            successes += 1;
                            payload.push_str(&format!("Summary: {}\n", resp.content.trim()));
                        }
                        Err(e) => payload.push_str(&format!("Error: summarizer failed: {e}\n")),
                    }
                }
                Err(e) => payload.push_str(&format!("Error: {e}\n")),
            }
            payload.push('\n');
        }
        let status = if successes > 0 { ToolStatus::Ok } else { ToolStatus::ToolError };
        ToolResponse { payload, status, elapsed: Duration::ZERO, tool_name: TOOL_VISIT.into() }
    }

    fn do_execute(&self, code: &str, deadline: Duration) -> ToolResponse {
        match self.sandbox.execute(code, deadline) {
            Ok((stdout, _, 0)) => {
                let payload = if stdout.trim().is_empty() {
                    super::python::EMPTY_OUTPUT_NOTICE.to_string()
                } else {
                    stdout
                };
                ToolResponse::ok(TOOL_PYTHON, payload)
            }
            Ok((_, stderr, exit)) => {
                ToolResponse::error(TOOL_PYTHON, format!("execution failed (exit {exit}):\n{stderr}"))
            }
            Err(e) => ToolResponse {
                payload: format!("sandbox unavailable: {e}"),
                status: ToolStatus::Timeout,
                elapsed: Duration::ZERO,
                tool_name: TOOL_PYTHON.into(),
            },
        }
    }
}

impl ToolEnvironment for LiveEnv {
    fn dispatch(&self, request: &ToolRequest) -> ToolResponse {
        let start = Instant::now();
        let args = &request.arguments;
        let mut resp = match request.name.as_str() {
            TOOL_GOOGLE_SEARCH => {
                self.do_search(&string_array(args, "query"), SearchBackend::Web, request.deadline)
            }
            TOOL_GOOGLE_SCHOLAR => self.do_search(
                &string_array(args, "query"),
                SearchBackend::Scholar,
                request.deadline,
            ),
            TOOL_VISIT => self.do_visit(
                &string_array(args, "url"),
                args["goal"].as_str().unwrap_or(""),
                args["parse_type"].as_str().unwrap_or("html"),
                request.deadline,
            ),
            TOOL_PYTHON => self.do_execute(args["code"].as_str().unwrap_or(""), request.deadline),
            other => ToolResponse::error(other, format!("unknown tool '{other}'")),
        };
        resp.elapsed = start.elapsed();
        finalize(resp, &request.name, self.response_cap)
    }

    fn response_cap(&self) -> usize {
        self.response_cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP server for exercising the search client.
    fn serve_once(body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let resp = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        format!("http://{addr}/search")
    }

    #[test]
    fn search_client_parses_wire_results() {
        let endpoint = serve_once(
            r#"{"results":[{"title":"T1","url":"https://a/","snippet":"s1"}]}"#,
        );
        let client = SearchClient::new(endpoint, None);
        let results = client
            .search("anything", SearchBackend::Web, Duration::from_secs(5))
            .unwrap();
        assert_eq!(results, vec![("T1".into(), "https://a/".into(), "s1".into())]);
    }
}
