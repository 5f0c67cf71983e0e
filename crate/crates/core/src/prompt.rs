//! Prompt templates and the four prompt builders.
//!
//! Templates are text assets under `assets/prompts` with `{SLOT}` markers
//! (upper-case letters, digits and underscores between braces). Rendering
//! is a single left-to-right pass, so substituted values are never
//! re-scanned for slots.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ErrorTriple, ResultObject};
use crate::feed::{sample_rows, Feed, DEFAULT_SAMPLE_ROWS};
use crate::fewshot::FewShotExample;
use crate::schema::type_description;
use crate::table::{TypedTable, Value};

/// Bumped whenever any template text changes.
pub const TEMPLATE_VERSION: u32 = 1;

/// Longest `relevant_code` (in characters) quoted in an error prompt.
pub const RELEVANT_CODE_LIMIT: usize = 4000;
pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// Files shown in the feed-samples section, when present.
pub const SAMPLE_FILES: [&str; 8] =
    ["agency", "routes", "trips", "stops", "stop_times", "calendar", "calendar_dates", "shapes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: no value for slot {{{slot}}}")]
    MissingSlot { template: &'static str, slot: String },
}

macro_rules! asset {
    ($name:literal) => {
        Template { name: $name, text: include_str!(concat!("../assets/prompts/", $name, ".txt")) }
    };
}

pub mod templates {
    use super::Template;

    pub const MODERATION: Template = asset!("moderation");
    pub const MAIN: Template = asset!("main");
    pub const CUSTOM_FUNCTIONS: Template = asset!("custom_functions");
    pub const DATA_TYPES_FILE: Template = asset!("data_types_file");
    pub const FEED_SAMPLE_FILE: Template = asset!("feed_sample_file");
    pub const EXAMPLES_BLOCK: Template = asset!("examples_block");
    pub const EXAMPLE: Template = asset!("example");
    pub const ERROR: Template = asset!("error");
    pub const SUMMARY: Template = asset!("summary");
    pub const SUMMARY_USER: Template = asset!("summary_user");

    pub const ALL: [Template; 10] = [
        MODERATION,
        MAIN,
        CUSTOM_FUNCTIONS,
        DATA_TYPES_FILE,
        FEED_SAMPLE_FILE,
        EXAMPLES_BLOCK,
        EXAMPLE,
        ERROR,
        SUMMARY,
        SUMMARY_USER,
    ];
}

/// A `{SLOT}` occurrence: byte range and slot name.
fn next_slot(text: &str, from: usize) -> Option<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut i = from;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut j = start + 1;
        while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
            j += 1;
        }
        if j > start + 1 && j < bytes.len() && bytes[j] == b'}' && bytes[start + 1].is_ascii_uppercase() {
            return Some((start, j + 1, &text[start + 1..j]));
        }
        i = start + 1;
    }
    None
}

impl Template {
    pub fn slots(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut pos = 0;
        while let Some((_, end, name)) = next_slot(self.text, pos) {
            if !out.contains(&name) {
                out.push(name);
            }
            pos = end;
        }
        out
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut pos = 0;
        while let Some((start, end, name)) = next_slot(self.text, pos) {
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingSlot { template: self.name, slot: name.to_string() })?;
            out.push_str(&self.text[pos..start]);
            out.push_str(value);
            pos = end;
        }
        out.push_str(&self.text[pos..]);
        Ok(out)
    }

    /// Rendering of a bundled asset whose slots are covered by tests.
    fn fill(&self, values: &[(&str, &str)]) -> String {
        self.render(values).expect("bundled template slots are fixed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Moderation,
    Main,
    ErrorRetry,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub assistant: String,
}

impl Turn {
    pub fn new(user: impl Into<String>, assistant: impl Into<String>) -> Self {
        Turn { user: user.into(), assistant: assistant.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub history: Vec<Turn>,
    pub user_text: String,
    pub role_tag: RoleTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptModuleKind {
    Role,
    TaskInstructions,
    DataTypes,
    FeedSamples,
    CustomFunctions,
}

impl PromptModuleKind {
    pub const ORDER: [PromptModuleKind; 5] = [
        PromptModuleKind::Role,
        PromptModuleKind::TaskInstructions,
        PromptModuleKind::DataTypes,
        PromptModuleKind::FeedSamples,
        PromptModuleKind::CustomFunctions,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PromptModuleKind::Role => "Role",
            PromptModuleKind::TaskInstructions => "Task Instructions",
            PromptModuleKind::DataTypes => "Data Types",
            PromptModuleKind::FeedSamples => "Feed Samples",
            PromptModuleKind::CustomFunctions => "Custom Functions",
        }
    }

    pub fn open(self) -> String {
        format!("<{}>", self.tag())
    }

    pub fn close(self) -> String {
        format!("</{}>", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("precondition violated: {0}")]
    PreconditionViolation(&'static str),
}

pub fn build_moderation_prompt(query: &str) -> Result<PromptBundle, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::PreconditionViolation("query is empty"));
    }
    Ok(PromptBundle {
        system_text: templates::MODERATION.fill(&[]),
        history: Vec::new(),
        user_text: query.to_string(),
        role_tag: RoleTag::Moderation,
    })
}

/// Per-file field list with semantic types.
pub fn data_types_section(feed: &Feed) -> String {
    let units = feed.meta().dist_units.map_or("kilometers", |u| u.as_str());
    let mut blocks = Vec::new();
    for (stem, table) in feed.tables() {
        let mut fields = String::new();
        for c in table.columns() {
            if !fields.is_empty() {
                fields.push('\n');
            }
            let desc = if c.name == "shape_dist_traveled" {
                format!("float ({units})")
            } else {
                type_description(c.kind).to_string()
            };
            let _ = write!(fields, "- {}: {}", c.name, desc);
        }
        let file = format!("{stem}.txt");
        blocks.push(templates::DATA_TYPES_FILE.fill(&[("FILE_NAME", &file), ("FIELDS", &fields)]));
    }
    blocks.join("\n")
}

fn cell_text(v: Value<'_>) -> String {
    match v {
        Value::Null => String::from("NaN"),
        Value::Float(x) => format!("{x:.4}"),
        other => format!("{other}"),
    }
}

/// Markdown table of a sample.
pub fn render_table(table: &TypedTable) -> String {
    let mut out = String::new();
    let names: Vec<&str> = table.column_names().collect();
    let _ = writeln!(out, "| {} |", names.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(names.len()));
    for r in 0..table.num_rows() {
        let cells: Vec<String> = table.columns().iter().map(|c| cell_text(c.data.value(r))).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out.truncate(out.trim_end().len());
    out
}

pub fn feed_samples_section(feed: &Feed) -> String {
    SAMPLE_FILES
        .iter()
        .filter_map(|stem| {
            let sample = sample_rows(feed, stem, DEFAULT_SAMPLE_ROWS).ok()?;
            let file = format!("{stem}.txt");
            Some(templates::FEED_SAMPLE_FILE.fill(&[("FILE_NAME", &file), ("TABLE", &render_table(&sample))]))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn examples_section(examples: &[&FewShotExample]) -> Option<String> {
    if examples.is_empty() {
        return None;
    }
    let rendered: Vec<String> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let rank = format!("{}", i + 1);
            templates::EXAMPLE.fill(&[("RANK", &rank), ("QUERY", &ex.query), ("RESPONSE", &ex.response)])
        })
        .collect();
    Some(templates::EXAMPLES_BLOCK.fill(&[("EXAMPLES", &rendered.join("\n"))]))
}

/// Main prompt: the five tagged modules, then the few-shot examples in the
/// order given (callers pass them best-first).
pub fn build_main_prompt(query: &str, history: &[Turn], examples: &[&FewShotExample], feed: &Feed) -> PromptBundle {
    let units = feed.meta().dist_units.map_or("kilometers", |u| u.as_str());
    let custom = templates::CUSTOM_FUNCTIONS.fill(&[]);
    let mut system_text = templates::MAIN.fill(&[
        ("DIST_UNITS", units),
        ("DATA_TYPES", &data_types_section(feed)),
        ("FEED_SAMPLES", &feed_samples_section(feed)),
        ("CUSTOM_FUNCTIONS", &custom),
    ]);
    if let Some(block) = examples_section(examples) {
        if !system_text.ends_with('\n') {
            system_text.push('\n');
        }
        system_text.push_str(&block);
    }
    PromptBundle { system_text, history: history.to_vec(), user_text: query.to_string(), role_tag: RoleTag::Main }
}

fn escape_into(out: &mut String, s: &str, newlines: bool) {
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '`' => out.push_str("&#96;"),
            '\n' if newlines => out.push_str("&#10;"),
            c => out.push(c),
        }
    }
}

/// Escapes a value for the error template. Backticks (code fence
/// delimiters) and ampersands always; newlines too when `single_line`.
pub fn escape_field(s: &str, single_line: bool) -> String {
    let mut out = String::with_capacity(s.len());
    escape_into(&mut out, s, single_line);
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let (ch, len) = [("&amp;", '&'), ("&#96;", '`'), ("&#10;", '\n')]
            .into_iter()
            .find(|(ent, _)| rest.starts_with(ent))
            .map_or(('&', 1), |(ent, c)| (c, ent.len()));
        out.push(ch);
        rest = &rest[len..];
    }
    out.push_str(rest);
    out
}

/// Cuts `code` to [`RELEVANT_CODE_LIMIT`] characters plus the marker.
pub fn truncate_code(code: &str) -> String {
    match code.char_indices().nth(RELEVANT_CODE_LIMIT) {
        Some((cut, _)) => format!("{}{}", &code[..cut], TRUNCATION_MARKER),
        None => code.to_string(),
    }
}

/// The error prompt's user text.
pub fn error_prompt_text(error: &ErrorTriple) -> String {
    templates::ERROR.fill(&[
        ("ERROR_TYPE", &escape_field(&error.error_type, true)),
        ("ERROR_MESSAGE", &escape_field(&error.message, false)),
        ("RELEVANT_CODE", &escape_field(&truncate_code(&error.relevant_code), false)),
    ])
}

/// Recovers the (escaped-then-unescaped) fields from [`error_prompt_text`].
pub fn parse_error_prompt(text: &str) -> Option<ErrorTriple> {
    const TYPE: &str = "- Error Type: ";
    const MSG: &str = "\n- Error Message: ";
    const CODE: &str = "\n- Relevant Code:\n```python\n";
    const END: &str = "\n```\n";
    let a = text.find(TYPE)? + TYPE.len();
    let b = a + text[a..].find(MSG)?;
    let c = b + MSG.len();
    let d = c + text[c..].find(CODE)?;
    let e = d + CODE.len();
    let f = e + text[e..].find(END)?;
    Some(ErrorTriple::new(unescape_field(&text[a..b]), unescape_field(&text[c..d]), unescape_field(&text[e..f])))
}

/// Retry prompt after a failed attempt: the previous bundle's history plus
/// the failed exchange, then the error prompt as the new user turn.
pub fn build_error_prompt(previous: &PromptBundle, failed_reply: &str, error: &ErrorTriple) -> PromptBundle {
    let mut history = previous.history.clone();
    history.push(Turn::new(previous.user_text.clone(), failed_reply));
    PromptBundle {
        system_text: previous.system_text.clone(),
        history,
        user_text: error_prompt_text(error),
        role_tag: RoleTag::ErrorRetry,
    }
}

pub fn build_summary_prompt(query: &str, result: &ResultObject, code: &str) -> PromptBundle {
    let user_text =
        templates::SUMMARY_USER.fill(&[("QUERY", query), ("RESULT", &result.to_json()), ("CODE", code)]);
    PromptBundle { system_text: templates::SUMMARY.fill(&[]), history: Vec::new(), user_text, role_tag: RoleTag::Summary }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn renderer_single_pass() {
        let t = Template { name: "t", text: "a {X} b {Y} {lower} {X}" };
        assert_eq!(t.slots(), ["X", "Y"]);
        assert_eq!(t.render(&[("X", "{Y}"), ("Y", "2")]).unwrap(), "a {Y} b 2 {lower} {Y}");
        assert_eq!(
            t.render(&[("X", "1")]),
            Err(TemplateError::MissingSlot { template: "t", slot: "Y".into() })
        );
    }

    #[test]
    fn asset_slots() {
        use templates::*;
        assert_eq!(MAIN.slots(), ["DIST_UNITS", "DATA_TYPES", "FEED_SAMPLES", "CUSTOM_FUNCTIONS"]);
        assert_eq!(ERROR.slots(), ["ERROR_TYPE", "ERROR_MESSAGE", "RELEVANT_CODE"]);
        assert_eq!(SUMMARY_USER.slots(), ["QUERY", "RESULT", "CODE"]);
        assert!(MODERATION.slots().is_empty());
        assert!(SUMMARY.slots().is_empty());
        assert!(CUSTOM_FUNCTIONS.slots().is_empty());
        assert_eq!(EXAMPLE.slots(), ["RANK", "QUERY", "RESPONSE"]);
    }

    #[test]
    fn moderation() {
        let b = build_moderation_prompt("Show all the stops on Market St").unwrap();
        assert!(b.system_text.contains("- Content not related to GTFS, public transit, or transportation coding."));
        assert!(b.system_text.contains("- Questions related to information extraction from the GTFS feed."));
        assert_eq!(b.user_text, "Show all the stops on Market St");
        assert_eq!(b.role_tag, RoleTag::Moderation);
        assert!(build_moderation_prompt("  \n\t").is_err());
        assert!(build_moderation_prompt("").is_err());
    }

    #[test]
    fn error_prompt_fields_in_order() {
        let e = ErrorTriple::new("TypeError", "unsupported operand", "<snippet>");
        let t = error_prompt_text(&e);
        let (a, b, c) = (t.find("Error Type: TypeError").unwrap(), t.find("Error Message: unsupported operand").unwrap(), t.find("<snippet>").unwrap());
        assert!(a < b && b < c);
        assert!(t.find("Please account for this error").unwrap() > c);
        assert_eq!(parse_error_prompt(&t).unwrap(), e);
    }

    #[test]
    fn error_prompt_escapes_delimiters() {
        let e = ErrorTriple::new(
            "Weird\nType",
            "bad ```python\n- Relevant Code:\n``` & {ERROR_TYPE}",
            "x = '```'\n# &amp; literal\n",
        );
        let t = error_prompt_text(&e);
        assert_eq!(t.matches("```").count(), 2);
        assert!(t.contains("{ERROR_TYPE}"));
        assert_eq!(parse_error_prompt(&t).unwrap(), e);
    }

    #[test]
    fn long_code_truncated() {
        let code: String = "x = 1  # é\n".repeat(1000);
        let e = ErrorTriple::new("ValueError", "m", code);
        let t = error_prompt_text(&e);
        let back = parse_error_prompt(&t).unwrap();
        assert!(back.relevant_code.ends_with(TRUNCATION_MARKER));
        assert_eq!(back.relevant_code.chars().count(), RELEVANT_CODE_LIMIT + TRUNCATION_MARKER.chars().count());
        assert_eq!(truncate_code("short"), "short");
        assert_eq!(truncate_code(&"a".repeat(RELEVANT_CODE_LIMIT)), "a".repeat(RELEVANT_CODE_LIMIT));
    }

    #[test]
    fn retry_bundle_carries_failed_turn() {
        let main = PromptBundle {
            system_text: "sys".into(),
            history: vec![Turn::new("q0", "a0")],
            user_text: "q1".into(),
            role_tag: RoleTag::Main,
        };
        let e = ErrorTriple::new("TypeError", "m", "c");
        let retry = build_error_prompt(&main, "```python\nbad\n```", &e);
        assert_eq!(retry.role_tag, RoleTag::ErrorRetry);
        assert_eq!(retry.system_text, "sys");
        assert_eq!(retry.history, [Turn::new("q0", "a0"), Turn::new("q1", "```python\nbad\n```")]);
        assert_eq!(parse_error_prompt(&retry.user_text).unwrap(), e);
    }

    #[test]
    fn summary() {
        let r = ResultObject::new("Found 3 stops");
        let b = build_summary_prompt("How many stops?", &r, "result = {}");
        assert!(b.system_text.contains("Truncate floats to 4 digits after the decimal"));
        assert!(b.system_text.contains("at most five instances"));
        assert!(b.user_text.contains("\"additional_info\": null"));
        assert!(b.user_text.contains("How many stops?"));
        assert!(b.user_text.contains("result = {}"));
        assert_eq!(b.role_tag, RoleTag::Summary);
    }
}
