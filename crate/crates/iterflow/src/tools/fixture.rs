//! Deterministic stand-in for the live web: a canned corpus of search
//! results, pages, and goal-conditioned summaries.
//!
//! Identical (request, corpus) pairs produce identical response bytes —
//! elapsed is pinned to zero so fixture runs are reproducible bit-for-bit.
//! Python execution runs locally through `PythonRunner`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::python::PythonRunner;
use super::{finalize, string_array, SearchBackend, ToolEnvironment, ToolRequest};
use crate::codec::{TOOL_GOOGLE_SCHOLAR, TOOL_GOOGLE_SEARCH, TOOL_PYTHON, TOOL_VISIT};
use crate::mdp::{ToolResponse, ToolStatus, DEFAULT_RESPONSE_CAP};

pub const TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("failed to read fixture manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse fixture manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("result url '{0}' does not resolve within the corpus")]
    DanglingUrl(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

#[derive(Debug, Clone, Default)]
pub struct PageEntry {
    pub content: String,
    /// Goal-class keyed summaries: keywords (lowercase) -> canned summary.
    pub summaries: Vec<(Vec<String>, String)>,
}

/// Offline corpus: query -> ordered results, url -> page + summaries.
#[derive(Debug, Clone, Default)]
pub struct FixtureCorpus {
    pub web_index: BTreeMap<String, Vec<SearchResult>>,
    pub scholar_index: BTreeMap<String, Vec<SearchResult>>,
    pub pages: BTreeMap<String, PageEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestSearchEntry {
    query: String,
    #[serde(default)]
    backend: Option<String>,
    results: Vec<SearchResult>,
}

#[derive(Debug, Deserialize)]
struct ManifestSummary {
    goal_keywords: Vec<String>,
    summary: String,
}

#[derive(Debug, Deserialize)]
struct ManifestPage {
    url: String,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    content_file: Option<String>,
    #[serde(default)]
    summaries: Vec<ManifestSummary>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    #[serde(default)]
    search: Vec<ManifestSearchEntry>,
    #[serde(default)]
    page: Vec<ManifestPage>,
}

impl FixtureCorpus {
    /// Loads a corpus from a directory holding `manifest.toml` plus any
    /// content files the manifest references.
    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        let manifest: Manifest =
            toml::from_str(&std::fs::read_to_string(dir.join("manifest.toml"))?)?;
        let mut corpus = FixtureCorpus::default();
        for page in manifest.page {
            let content = match (page.content, page.content_file) {
                (Some(c), _) => c,
                (None, Some(f)) => std::fs::read_to_string(dir.join(f))?,
                (None, None) => String::new(),
            };
            corpus.pages.insert(
                page.url,
                PageEntry {
                    content,
                    summaries: page
                        .summaries
                        .into_iter()
                        .map(|s| {
                            (
                                s.goal_keywords.iter().map(|k| k.to_lowercase()).collect(),
                                s.summary,
                            )
                        })
                        .collect(),
                },
            );
        }
        for entry in manifest.search {
            let index = match entry.backend.as_deref() {
                Some("scholar") => &mut corpus.scholar_index,
                _ => &mut corpus.web_index,
            };
            index.insert(entry.query, entry.results);
        }
        corpus.validate()?;
        Ok(corpus)
    }

    /// Every url in any result list must resolve within the corpus.
    pub fn validate(&self) -> Result<(), FixtureError> {
        for results in self.web_index.values().chain(self.scholar_index.values()) {
            for r in results {
                if !self.pages.contains_key(&r.url) {
                    return Err(FixtureError::DanglingUrl(r.url.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn with_search(mut self, query: impl Into<String>, results: Vec<SearchResult>) -> Self {
        self.web_index.insert(query.into(), results);
        self
    }

    pub fn with_page(mut self, url: impl Into<String>, entry: PageEntry) -> Self {
        self.pages.insert(url.into(), entry);
        self
    }
}

pub struct FixtureEnv {
    pub corpus: FixtureCorpus,
    pub response_cap: usize,
    pub python: Option<PythonRunner>,
}

impl FixtureEnv {
    pub fn new(corpus: FixtureCorpus) -> Self {
        Self { corpus, response_cap: DEFAULT_RESPONSE_CAP, python: Some(PythonRunner::default()) }
    }

    pub fn with_response_cap(mut self, cap: usize) -> Self {
        self.response_cap = cap;
        self
    }

    fn search(&self, queries: &[String], backend: SearchBackend) -> ToolResponse {
        let tool = match backend {
            SearchBackend::Web => TOOL_GOOGLE_SEARCH,
            SearchBackend::Scholar => TOOL_GOOGLE_SCHOLAR,
        };
        if queries.is_empty() {
            return ToolResponse::error(tool, "at least one query is required");
        }
        let mut payload = String::new();
        for q in queries {
            payload.push_str(&format!("Results for \"{q}\":\n"));
            let results = match backend {
                SearchBackend::Web => self.corpus.web_index.get(q),
                // scholar falls back to the general web index
                SearchBackend::Scholar => {
                    self.corpus.scholar_index.get(q).or_else(|| self.corpus.web_index.get(q))
                }
            };
            match results {
                Some(rs) if !rs.is_empty() => {
                    for (i, r) in rs.iter().take(TOP_K).enumerate() {
                        payload.push_str(&format!(
                            "{}. {}\n   {}\n   {}\n",
                            i + 1,
                            r.title,
                            r.url,
                            r.snippet
                        ));
                    }
                }
                _ => payload.push_str("no results\n"),
            }
            payload.push('\n');
        }
        ToolResponse::ok(tool, payload)
    }

    fn visit(&self, urls: &[String], goal: &str, _parse_type: &str) -> ToolResponse {
        if urls.is_empty() {
            return ToolResponse::error(TOOL_VISIT, "at least one url is required");
        }
        let goal_lc = goal.to_lowercase();
        let mut payload = String::new();
        let mut successes = 0usize;
        for url in urls {
            payload.push_str(&format!("URL: {url}\n"));
            match self.corpus.pages.get(url) {
                Some(page) => {
                    successes += 1;
                    // goal-class keying: any keyword hit selects the summary
                    let summary = page
                        .summaries
                        .iter()
                        .find(|(keywords, _)| keywords.iter().any(|k| goal_lc.contains(k)))
                        .map(|(_, s)| s.as_str());
                    match summary {
                        Some(s) => payload.push_str(&format!("Summary: {s}\n")),
                        None => payload.push_str(&format!(
                            "Summary: {}\n",
                            page.content.chars().take(512).collect::<String>()
                        )),
                    }
                }
                None => {
                    payload.push_str("Error: url is unreachable in this corpus\n");
                }
            }
            payload.push('\n');
        }
        if successes == 0 {
            return ToolResponse {
                payload,
                status: ToolStatus::ToolError,
                elapsed: Duration::ZERO,
                tool_name: TOOL_VISIT.into(),
            };
        }
        ToolResponse::ok(TOOL_VISIT, payload)
    }

    fn execute(&self, code: &str, deadline: Duration) -> ToolResponse {
        match &self.python {
            Some(runner) => {
                let mut resp = runner.run(code, deadline);
                // pin elapsed so fixture responses are byte-stable
                resp.elapsed = Duration::ZERO;
                resp
            }
            None => ToolResponse::error(TOOL_PYTHON, "python execution disabled in this corpus"),
        }
    }
}

impl ToolEnvironment for FixtureEnv {
    fn dispatch(&self, request: &ToolRequest) -> ToolResponse {
        let args = &request.arguments;
        let raw = match request.name.as_str() {
            TOOL_GOOGLE_SEARCH => self.search(&string_array(args, "query"), SearchBackend::Web),
            TOOL_GOOGLE_SCHOLAR => {
                self.search(&string_array(args, "query"), SearchBackend::Scholar)
            }
            TOOL_VISIT => self.visit(
                &string_array(args, "url"),
                args["goal"].as_str().unwrap_or(""),
                args["parse_type"].as_str().unwrap_or("html"),
            ),
            TOOL_PYTHON => self.execute(args["code"].as_str().unwrap_or(""), request.deadline),
            other => ToolResponse::error(other, format!("unknown tool '{other}'")),
        };
        finalize(raw, &request.name, self.response_cap)
    }

    fn response_cap(&self) -> usize {
        self.response_cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> FixtureCorpus {
        let results: Vec<SearchResult> = (0..10)
            .map(|i| SearchResult {
                title: format!("Result {i}"),
                url: format!("https://example.org/{i}"),
                snippet: format!("snippet {i}"),
            })
            .collect();
        let mut c = FixtureCorpus::default().with_search("transit peptide", results);
        for i in 0..10 {
            c = c.with_page(
                format!("https://example.org/{i}"),
                PageEntry {
                    content: format!("Full text of page {i}."),
                    summaries: vec![(
                        vec!["methodology".into()],
                        format!("Methodology summary for page {i}."),
                    )],
                },
            );
        }
        c
    }

    fn env() -> FixtureEnv {
        FixtureEnv::new(corpus())
    }

    fn search_req(queries: &[&str]) -> ToolRequest {
        ToolRequest::new(
            TOOL_GOOGLE_SEARCH,
            serde_json::json!({ "query": queries }),
            Duration::from_secs(5),
        )
    }

    #[test]
    fn indexed_query_returns_ten_results_in_order() {
        let r = env().dispatch(&search_req(&["transit peptide"]));
        assert_eq!(r.status, ToolStatus::Ok);
        for i in 0..10 {
            assert!(r.payload.contains(&format!("{}. Result {i}", i + 1)));
        }
    }

    #[test]
    fn two_queries_give_two_labeled_blocks() {
        let r = env().dispatch(&search_req(&["transit peptide", "other"]));
        assert!(r.payload.contains("Results for \"transit peptide\":"));
        assert!(r.payload.contains("Results for \"other\":"));
    }

    #[test]
    fn unindexed_query_reports_no_results() {
        let r = env().dispatch(&search_req(&["nothing here"]));
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.payload.contains("no results"));
    }

    #[test]
    fn scholar_falls_back_to_web_index() {
        let req = ToolRequest::new(
            TOOL_GOOGLE_SCHOLAR,
            serde_json::json!({ "query": ["transit peptide"] }),
            Duration::from_secs(5),
        );
        let r = env().dispatch(&req);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.payload.contains("Result 0"));
        assert_eq!(r.tool_name, TOOL_GOOGLE_SCHOLAR);
    }

    #[test]
    fn visit_returns_goal_conditioned_summary() {
        let req = ToolRequest::new(
            TOOL_VISIT,
            serde_json::json!({
                "url": ["https://example.org/3"],
                "goal": "find the methodology section",
                "parse_type": "html"
            }),
            Duration::from_secs(5),
        );
        let r = env().dispatch(&req);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.payload.contains("Methodology summary for page 3."));
    }

    #[test]
    fn visit_mixed_urls_is_partial_success() {
        let req = ToolRequest::new(
            TOOL_VISIT,
            serde_json::json!({
                "url": ["https://example.org/1", "https://nowhere.invalid/"],
                "goal": "methodology",
            }),
            Duration::from_secs(5),
        );
        let r = env().dispatch(&req);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.payload.contains("Methodology summary for page 1."));
        assert!(r.payload.contains("unreachable"));
    }

    #[test]
    fn visit_all_unreachable_is_tool_error() {
        let req = ToolRequest::new(
            TOOL_VISIT,
            serde_json::json!({ "url": ["https://nowhere.invalid/"], "goal": "g" }),
            Duration::from_secs(5),
        );
        assert_eq!(env().dispatch(&req).status, ToolStatus::ToolError);
    }

    #[test]
    fn python_routes_through_interpreter() {
        let req = ToolRequest::new(
            TOOL_PYTHON,
            serde_json::json!({ "code": "print(2+2)" }),
            Duration::from_secs(10),
        );
        let r = env().dispatch(&req);
        assert_eq!(r.payload, "4");
        assert_eq!(r.tool_name, TOOL_PYTHON);
    }

    #[test]
    fn unknown_tool_is_tool_error() {
        let req = ToolRequest::new("teleport", serde_json::json!({}), Duration::from_secs(5));
        assert_eq!(env().dispatch(&req).status, ToolStatus::ToolError);
    }

    #[test]
    fn oversized_payload_is_capped_with_marker() {
        let big = "z".repeat(100_000);
        let c = FixtureCorpus::default().with_page(
            "https://big.example/",
            PageEntry { content: big, summaries: vec![(vec!["all".into()], "w".repeat(100_000))] },
        );
        let env = FixtureEnv::new(c).with_response_cap(1000);
        let req = ToolRequest::new(
            TOOL_VISIT,
            serde_json::json!({ "url": ["https://big.example/"], "goal": "all of it" }),
            Duration::from_secs(5),
        );
        let r = env.dispatch(&req);
        assert!(r.payload.chars().count() <= 1000);
        assert!(r.payload.ends_with(crate::mdp::TRUNCATION_MARKER));
    }

    #[test]
    fn fixture_dispatch_is_deterministic() {
        let e = env();
        let req = search_req(&["transit peptide"]);
        let a = e.dispatch(&req);
        let b = e.dispatch(&req);
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_roundtrip_and_dangling_url_check() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.toml"),
            r#"
[[search]]
query = "q1"
results = [{ title = "T", url = "https://a/", snippet = "s" }]

[[page]]
url = "https://a/"
content = "body"
[[page.summaries]]
goal_keywords = ["facts"]
summary = "the facts"
"#,
        )
        .unwrap();
        let c = FixtureCorpus::from_dir(dir.path()).unwrap();
        assert!(c.web_index.contains_key("q1"));
        assert!(c.pages.contains_key("https://a/"));

        std::fs::write(
            dir.path().join("manifest.toml"),
            r#"
[[search]]
query = "q1"
results = [{ title = "T", url = "https://missing/", snippet = "s" }]
"#,
        )
        .unwrap();
        assert!(matches!(
            FixtureCorpus::from_dir(dir.path()),
            Err(FixtureError::DanglingUrl(_))
        ));
    }
}
