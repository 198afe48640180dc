//! Parsing and serialization of structured policy decisions.
//!
//! Decision markup is tagged sections: `<think>…</think>`, `<report>…</report>`,
//! then exactly one of `<tool_call>{json}</tool_call>` or `<answer>…</answer>`.
//! Parsing is total: any byte sequence maps to `Parsed` or `Malformed`, never
//! a panic. Tool-call arguments are validated against the registered schemas;
//! unknown extra arguments are dropped (permissive read, strict write).

use serde_json::{Map, Value};

use crate::mdp::{Action, Decision, Report, DEFAULT_REPORT_BUDGET};

/// Wire-protocol tool names. These literal identifiers are part of the
/// tool schema contract, not implementation vocabulary.
pub const TOOL_GOOGLE_SEARCH: &str = "google_search";
pub const TOOL_GOOGLE_SCHOLAR: &str = "google_scholar";
pub const TOOL_VISIT: &str = "Visit";
pub const TOOL_PYTHON: &str = "PythonInterpreter";

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    /// Array of strings with a minimum length.
    StringArray { min_items: usize },
    /// Free-form string.
    Text,
    /// One of a fixed set of values, with an optional default applied when
    /// the argument is absent.
    Enum { values: Vec<&'static str>, default: Option<&'static str> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub required: bool,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
}

impl ToolSchema {
    /// JSON function-schema form, suitable for embedding in a prompt.
    pub fn to_json(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.params {
            let mut prop = Map::new();
            match &p.kind {
                ParamKind::StringArray { min_items } => {
                    prop.insert("type".into(), Value::from("array"));
                    prop.insert("items".into(), serde_json::json!({"type": "string"}));
                    prop.insert("minItems".into(), Value::from(*min_items));
                }
                ParamKind::Text => {
                    prop.insert("type".into(), Value::from("string"));
                }
                ParamKind::Enum { values, default } => {
                    prop.insert("type".into(), Value::from("string"));
                    prop.insert(
                        "enum".into(),
                        Value::Array(values.iter().map(|v| Value::from(*v)).collect()),
                    );
                    if let Some(d) = default {
                        prop.insert("default".into(), Value::from(*d));
                    }
                }
            }
            prop.insert("description".into(), Value::from(p.description));
            properties.insert(p.name.to_string(), Value::Object(prop));
            if p.required {
                required.push(Value::from(p.name));
            }
        }
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                }
            }
        })
    }
}

/// The four built-in tool schemas.
pub fn builtin_schemas() -> Vec<ToolSchema> {
    vec![
        ToolSchema {
            name: TOOL_GOOGLE_SEARCH,
            description: "Perform Google web searches then returns a string of the top search results. Accepts multiple queries.",
            params: vec![ParamSpec {
                name: "query",
                kind: ParamKind::StringArray { min_items: 1 },
                required: true,
                description: "The list of search queries.",
            }],
        },
        ToolSchema {
            name: TOOL_GOOGLE_SCHOLAR,
            description: "Leverage Google Scholar to retrieve relevant information from academic publications. This tool also returns results from Google search.",
            params: vec![ParamSpec {
                name: "query",
                kind: ParamKind::StringArray { min_items: 1 },
                required: true,
                description: "The list of search queries.",
            }],
        },
        ToolSchema {
            name: TOOL_VISIT,
            description: "Visit webpage(s) or paper(s) and return the summary of the content.",
            params: vec![
                ParamSpec {
                    name: "url",
                    kind: ParamKind::StringArray { min_items: 1 },
                    required: true,
                    description: "The URL(s) to visit.",
                },
                ParamSpec {
                    name: "goal",
                    kind: ParamKind::Text,
                    required: true,
                    description: "The goal of the visit.",
                },
                ParamSpec {
                    name: "parse_type",
                    kind: ParamKind::Enum { values: vec!["html", "pdf"], default: Some("html") },
                    required: false,
                    description: "Specify 'html' or 'pdf' format.",
                },
            ],
        },
        ToolSchema {
            name: TOOL_PYTHON,
            description: "Executes Python code in a secure sandbox. Designed for calculations, data manipulations, and general programming tasks.",
            params: vec![ParamSpec {
                name: "code",
                kind: ParamKind::Text,
                required: true,
                description: "The Python code to execute. Output must use print() functions.",
            }],
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub enum MalformedReason {
    /// A required section (`think`, `report`, or the action block) is absent
    /// or empty where emptiness is not allowed.
    MissingSection(String),
    /// The tool-call body is not parseable JSON.
    BadJson(String),
    UnknownTool(String),
    /// Arguments violate the matching tool schema.
    SchemaViolation(String),
    MultipleActions,
}

impl std::fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MalformedReason::MissingSection(s) => write!(f, "missing section: {s}"),
            MalformedReason::BadJson(e) => write!(f, "tool call body is not valid JSON: {e}"),
            MalformedReason::UnknownTool(t) => write!(f, "unknown tool: {t}"),
            MalformedReason::SchemaViolation(e) => write!(f, "schema violation: {e}"),
            MalformedReason::MultipleActions => write!(f, "more than one action block"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ParseOutcome {
    Parsed(Decision),
    Malformed {
        reason: MalformedReason,
        /// The offending span of the input, for diagnostics.
        span: String,
        /// Whether a policy retry is worth attempting.
        recoverable: bool,
    },
}

impl ParseOutcome {
    fn malformed(reason: MalformedReason, span: impl Into<String>, recoverable: bool) -> Self {
        ParseOutcome::Malformed { reason, span: span.into(), recoverable }
    }

    pub fn is_parsed(&self) -> bool {
        matches!(self, ParseOutcome::Parsed(_))
    }
}

fn find_section<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(&raw[start..end])
}

fn find_all_sections<'a>(raw: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some(pos) = rest.find(&open) {
        let start = pos + open.len();
        match rest[start..].find(&close) {
            Some(end) => {
                out.push(&rest[start..start + end]);
                rest = &rest[start + end + close.len()..];
            }
            None => break,
        }
    }
    out
}

/// Validates `args` against `schema`: required fields present, array
/// minimums respected, enum values legal. Applies declared defaults and
/// drops unknown keys. Returns the sanitized argument object.
fn validate_args(schema: &ToolSchema, args: &Value) -> Result<Value, String> {
    let obj = args
        .as_object()
        .ok_or_else(|| format!("arguments must be a JSON object, got {args}"))?;
    let mut out = Map::new();
    for p in &schema.params {
        match obj.get(p.name) {
            Some(value) => {
                match &p.kind {
                    ParamKind::StringArray { min_items } => {
                        let arr = value
                            .as_array()
                            .ok_or_else(|| format!("'{}' must be an array of strings", p.name))?;
                        if arr.len() < *min_items {
                            return Err(format!(
                                "'{}' needs at least {min_items} item(s), got {}",
                                p.name,
                                arr.len()
                            ));
                        }
                        if !arr.iter().all(Value::is_string) {
                            return Err(format!("'{}' must contain only strings", p.name));
                        }
                    }
                    ParamKind::Text => {
                        if !value.is_string() {
                            return Err(format!("'{}' must be a string", p.name));
                        }
                    }
                    ParamKind::Enum { values, .. } => {
                        let s = value
                            .as_str()
                            .ok_or_else(|| format!("'{}' must be a string", p.name))?;
                        if !values.contains(&s) {
                            return Err(format!(
                                "'{}' must be one of {values:?}, got '{s}'",
                                p.name
                            ));
                        }
                    }
                }
                out.insert(p.name.to_string(), value.clone());
            }
            None => {
                if p.required {
                    return Err(format!("missing required argument '{}'", p.name));
                }
                if let ParamKind::Enum { default: Some(d), .. } = &p.kind {
                    out.insert(p.name.to_string(), Value::from(*d));
                }
            }
        }
    }
    for key in obj.keys() {
        if !schema.params.iter().any(|p| p.name == key) {
            eprintln!("warning: dropping unknown argument '{key}' for tool '{}'", schema.name);
        }
    }
    Ok(Value::Object(out))
}

/// Parses raw policy output into a `Decision`. Total on arbitrary input.
pub fn parse_decision(raw: &str, schemas: &[ToolSchema]) -> ParseOutcome {
    let think = match find_section(raw, "think") {
        Some(t) if !t.trim().is_empty() => t.trim().to_string(),
        _ => {
            return ParseOutcome::malformed(
                MalformedReason::MissingSection("think".into()),
                "",
                true,
            )
        }
    };
    let report = match find_section(raw, "report") {
        Some(r) => r.trim().to_string(),
        None => {
            return ParseOutcome::malformed(
                MalformedReason::MissingSection("report".into()),
                "",
                true,
            )
        }
    };

    let tool_blocks = find_all_sections(raw, "tool_call");
    let answer_blocks = find_all_sections(raw, "answer");
    let total = tool_blocks.len() + answer_blocks.len();
    if total == 0 {
        // No action at all: retries rarely help, the orchestrator converts
        // this into a forced failure after the retry budget.
        return ParseOutcome::malformed(
            MalformedReason::MissingSection("action".into()),
            "",
            false,
        );
    }
    if total > 1 {
        return ParseOutcome::malformed(MalformedReason::MultipleActions, "", true);
    }

    let action = if let Some(body) = tool_blocks.first() {
        let parsed: Value = match serde_json::from_str(body.trim()) {
            Ok(v) => v,
            Err(e) => {
                return ParseOutcome::malformed(
                    MalformedReason::BadJson(e.to_string()),
                    body.trim(),
                    true,
                )
            }
        };
        let name = match parsed.get("name").and_then(Value::as_str) {
            Some(n) => n.to_string(),
            None => {
                return ParseOutcome::malformed(
                    MalformedReason::BadJson("missing 'name' field".into()),
                    body.trim(),
                    true,
                )
            }
        };
        let schema = match schemas.iter().find(|s| s.name == name) {
            Some(s) => s,
            None => {
                return ParseOutcome::malformed(
                    MalformedReason::UnknownTool(name),
                    body.trim(),
                    true,
                )
            }
        };
        let args = parsed.get("arguments").cloned().unwrap_or(Value::Object(Map::new()));
        match validate_args(schema, &args) {
            Ok(sanitized) => Action::ToolCall { name, arguments: sanitized },
            Err(e) => {
                return ParseOutcome::malformed(
                    MalformedReason::SchemaViolation(e),
                    body.trim(),
                    true,
                )
            }
        }
    } else {
        let text = answer_blocks[0].trim().to_string();
        if text.is_empty() {
            return ParseOutcome::malformed(
                MalformedReason::SchemaViolation("answer text is empty".into()),
                "",
                true,
            );
        }
        Action::Answer { text }
    };

    ParseOutcome::Parsed(Decision {
        think,
        next_report: Report::new(report, 0, DEFAULT_REPORT_BUDGET),
        action,
        raw: raw.to_string(),
    })
}

/// Canonical text for a decision; `parse_decision` of the result yields the
/// same decision (modulo insignificant whitespace).
pub fn serialize_decision(d: &Decision) -> String {
    format!(
        "<think>\n{}\n</think>\n<report>\n{}\n</report>\n{}",
        d.think,
        d.next_report.content,
        d.action.to_canonical_text()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(raw: &str) -> ParseOutcome {
        parse_decision(raw, &builtin_schemas())
    }

    fn wrap(action: &str) -> String {
        format!("<think>reason</think>\n<report>notes</report>\n{action}")
    }

    #[test]
    fn parses_multi_query_search_call() {
        let raw = wrap(r#"<tool_call>{"name":"google_search","arguments":{"query":["a","b"]}}</tool_call>"#);
        match parse(&raw) {
            ParseOutcome::Parsed(d) => {
                assert_eq!(d.think, "reason");
                assert_eq!(d.next_report.content, "notes");
                match d.action {
                    Action::ToolCall { name, arguments } => {
                        assert_eq!(name, "google_search");
                        assert_eq!(arguments["query"].as_array().unwrap().len(), 2);
                    }
                    _ => panic!("expected tool call"),
                }
            }
            other => panic!("expected Parsed, got {other:?}"),
        }
    }

    #[test]
    fn parses_answer() {
        match parse(&wrap("<answer>42</answer>")) {
            ParseOutcome::Parsed(d) => assert_eq!(d.action, Action::Answer { text: "42".into() }),
            other => panic!("expected Parsed, got {other:?}"),
        }
    }

    #[test]
    fn visit_accepts_empty_goal_but_rejects_empty_url_array() {
        let ok = wrap(r#"<tool_call>{"name":"Visit","arguments":{"url":["https://x"],"goal":""}}</tool_call>"#);
        assert!(parse(&ok).is_parsed());
        let bad = wrap(r#"<tool_call>{"name":"Visit","arguments":{"url":[],"goal":"g"}}</tool_call>"#);
        match parse(&bad) {
            ParseOutcome::Malformed { reason: MalformedReason::SchemaViolation(_), .. } => {}
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn visit_parse_type_defaults_to_html() {
        let raw = wrap(r#"<tool_call>{"name":"Visit","arguments":{"url":["https://x"],"goal":"g"}}</tool_call>"#);
        match parse(&raw) {
            ParseOutcome::Parsed(d) => match d.action {
                Action::ToolCall { arguments, .. } => {
                    assert_eq!(arguments["parse_type"], "html");
                }
                _ => panic!("expected tool call"),
            },
            other => panic!("expected Parsed, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_tool() {
        let raw = wrap(r#"<tool_call>{"name":"teleport","arguments":{}}</tool_call>"#);
        assert!(matches!(
            parse(&raw),
            ParseOutcome::Malformed { reason: MalformedReason::UnknownTool(_), .. }
        ));
    }

    #[test]
    fn rejects_bad_json() {
        let raw = wrap("<tool_call>{not json</tool_call>");
        assert!(matches!(
            parse(&raw),
            ParseOutcome::Malformed { reason: MalformedReason::BadJson(_), recoverable: true, .. }
        ));
    }

    #[test]
    fn rejects_multiple_actions() {
        let raw = wrap("<answer>a</answer><answer>b</answer>");
        assert!(matches!(
            parse(&raw),
            ParseOutcome::Malformed { reason: MalformedReason::MultipleActions, .. }
        ));
    }

    #[test]
    fn missing_action_is_not_recoverable() {
        let raw = "<think>x</think><report>y</report>";
        assert!(matches!(
            parse(raw),
            ParseOutcome::Malformed {
                reason: MalformedReason::MissingSection(_),
                recoverable: false,
                ..
            }
        ));
    }

    #[test]
    fn unknown_arguments_are_dropped() {
        let raw = wrap(r#"<tool_call>{"name":"google_search","arguments":{"query":["a"],"extra":1}}</tool_call>"#);
        match parse(&raw) {
            ParseOutcome::Parsed(d) => match d.action {
                Action::ToolCall { arguments, .. } => {
                    assert!(arguments.get("extra").is_none());
                }
                _ => panic!("expected tool call"),
            },
            other => panic!("expected Parsed, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_search_and_answer() {
        for raw in [
            wrap(r#"<tool_call>{"name":"google_search","arguments":{"query":["a","b"]}}</tool_call>"#),
            wrap("<answer>Paris</answer>"),
        ] {
            let d = match parse(&raw) {
                ParseOutcome::Parsed(d) => d,
                other => panic!("expected Parsed, got {other:?}"),
            };
            let re = match parse(&serialize_decision(&d)) {
                ParseOutcome::Parsed(d) => d,
                other => panic!("roundtrip failed: {other:?}"),
            };
            assert_eq!(re.think, d.think);
            assert_eq!(re.next_report.content, d.next_report.content);
            assert_eq!(re.action, d.action);
        }
    }

    #[test]
    fn builtin_schema_json_matches_published_shapes() {
        let schemas = builtin_schemas();
        let search = schemas.iter().find(|s| s.name == "google_search").unwrap().to_json();
        assert_eq!(
            search["function"]["parameters"]["properties"]["query"],
            serde_json::json!({
                "type": "array",
                "items": {"type": "string"},
                "minItems": 1,
                "description": "The list of search queries."
            })
        );
        assert_eq!(search["function"]["parameters"]["required"], serde_json::json!(["query"]));

        let visit = schemas.iter().find(|s| s.name == "Visit").unwrap().to_json();
        assert_eq!(
            visit["function"]["parameters"]["required"],
            serde_json::json!(["url", "goal"])
        );
        assert_eq!(
            visit["function"]["parameters"]["properties"]["parse_type"]["enum"],
            serde_json::json!(["html", "pdf"])
        );
        assert_eq!(
            visit["function"]["parameters"]["properties"]["parse_type"]["default"],
            serde_json::json!("html")
        );

        let python = schemas.iter().find(|s| s.name == "PythonInterpreter").unwrap().to_json();
        assert_eq!(python["function"]["parameters"]["required"], serde_json::json!(["code"]));
    }

    fn clean_text() -> impl Strategy<Value = String> {
        // section bodies free of markup tags and surrounding whitespace
        "[a-zA-Z0-9 ,.!?-]{1,40}".prop_map(|s| s.trim().to_string()).prop_filter(
            "non-empty after trim",
            |s| !s.is_empty(),
        )
    }

    fn arb_decision() -> impl Strategy<Value = Decision> {
        (
            clean_text(),
            clean_text(),
            prop_oneof![
                proptest::collection::vec("[a-z0-9 ]{1,20}", 1..4).prop_map(|qs| {
                    Action::ToolCall {
                        name: "google_search".into(),
                        arguments: serde_json::json!({ "query": qs }),
                    }
                }),
                clean_text().prop_map(|t| Action::Answer { text: t }),
            ],
        )
            .prop_map(|(think, report, action)| Decision {
                think,
                next_report: Report::new(report, 0, DEFAULT_REPORT_BUDGET),
                action,
                raw: String::new(),
            })
    }

    proptest! {
        #[test]
        fn roundtrip_law(d in arb_decision()) {
            let re = match parse(&serialize_decision(&d)) {
                ParseOutcome::Parsed(d) => d,
                other => panic!("roundtrip parse failed: {other:?}"),
            };
            prop_assert_eq!(re.think, d.think);
            prop_assert_eq!(re.next_report.content, d.next_report.content);
            prop_assert_eq!(re.action, d.action);
        }

        #[test]
        fn serialize_is_injective(a in arb_decision(), b in arb_decision()) {
            let same = a.think == b.think
                && a.next_report.content == b.next_report.content
                && a.action == b.action;
            if !same {
                prop_assert_ne!(serialize_decision(&a), serialize_decision(&b));
            }
        }

        #[test]
        fn parse_is_total(raw in proptest::string::string_regex(".{0,200}").unwrap()) {
            let _ = parse(&raw);
        }
    }
}
