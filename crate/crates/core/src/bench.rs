//! Benchmark tasks, automated grading and Table-2 style reports.
//!
//! A task is the tuple (query template, feed, inputs, gold code, gold
//! output). Gold outputs come from executing the gold code; they are data,
//! never computed here.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::exec::{Executor, OutcomeKind, ResultObject};
use crate::feed::Feed;
use crate::fewshot::FewShotSelector;
use crate::llm::{ChatModel, LlmError, LlmRequest, LlmResponse};
use crate::pipeline::{ChatSession, NoStages, Pipeline, PipelineReport, RunConfig, Verdict};
use crate::prompt::RoleTag;

/// Absolute tolerance for numeric comparisons.
pub const NUMERIC_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Accessibility,
    BasicDataOperations,
    Fares,
    NavigationAndRouting,
    Performance,
    Routes,
    Stops,
    Time,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Accessibility,
        Category::BasicDataOperations,
        Category::Fares,
        Category::NavigationAndRouting,
        Category::Performance,
        Category::Routes,
        Category::Stops,
        Category::Time,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Accessibility => "accessibility",
            Category::BasicDataOperations => "basic_data_operations",
            Category::Fares => "fares",
            Category::NavigationAndRouting => "navigation_and_routing",
            Category::Performance => "performance",
            Category::Routes => "routes",
            Category::Stops => "stops",
            Category::Time => "time",
        }
    }

    /// Row label used in rendered report tables.
    pub fn label(self) -> &'static str {
        match self {
            Category::Accessibility => "Accessibility Analysis",
            Category::BasicDataOperations => "Basic Data Operations",
            Category::Fares => "Fare Analysis",
            Category::NavigationAndRouting => "Navigation and Routing",
            Category::Performance => "Performance Metrics",
            Category::Routes => "Route Analysis",
            Category::Stops => "Stop Analysis",
            Category::Time => "Temporal Analysis",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub category: Category,
    pub query_template: String,
    pub feed_id: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, Value>,
    pub gold_code: String,
    pub expected_output: Value,
    #[serde(default)]
    pub requires_visualization: bool,
    /// Lists in the expected output are compared as multisets.
    #[serde(default)]
    pub unordered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("task {task_id:?}: invalid or missing field {field:?}: {reason}")]
    SchemaError { task_id: String, field: String, reason: String },
    #[error("task {task_id:?}: unknown feed {feed_id:?}")]
    UnknownFeed { task_id: String, feed_id: String },
    #[error("task {task_id:?}: placeholder {{{placeholder}}} has no input")]
    UnboundPlaceholder { task_id: String, placeholder: String },
    #[error("duplicate task id {0:?}")]
    DuplicateTask(String),
}

fn schema(task_id: &str, field: &str, reason: impl Into<String>) -> TaskError {
    TaskError::SchemaError { task_id: task_id.to_string(), field: field.to_string(), reason: reason.into() }
}

/// `{name}` slots in a template, in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && !out.iter().any(|n| n == name)
                {
                    out.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn input_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl BenchmarkTask {
    /// The query with every placeholder substituted.
    pub fn query(&self) -> Result<String, TaskError> {
        let mut out = String::with_capacity(self.query_template.len());
        let mut rest = self.query_template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}');
            let name = close.map(|c| &after[..c]);
            match name {
                Some(n) if !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                    let v = self.inputs.get(n).ok_or_else(|| TaskError::UnboundPlaceholder {
                        task_id: self.task_id.clone(),
                        placeholder: n.to_string(),
                    })?;
                    out.push_str(&input_text(v));
                    rest = &after[n.len() + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.task_id.trim().is_empty() {
            return Err(schema(&self.task_id, "task_id", "empty"));
        }
        if self.query_template.trim().is_empty() {
            return Err(schema(&self.task_id, "query_template", "empty"));
        }
        if self.feed_id.trim().is_empty() {
            return Err(schema(&self.task_id, "feed_id", "empty"));
        }
        if self.gold_code.trim().is_empty() {
            return Err(schema(&self.task_id, "gold_code", "empty"));
        }
        match self.expected_output.get("answer") {
            Some(a) if !a.is_null() => {}
            _ => return Err(schema(&self.task_id, "expected_output", "has no answer")),
        }
        self.query().map(|_| ())
    }

    /// The gold output as a result object.
    pub fn expected(&self) -> ResultObject {
        serde_json::from_value(self.expected_output.clone()).expect("validated expected_output has an answer")
    }
}

const REQUIRED_FIELDS: [&str; 6] = ["task_id", "category", "query_template", "feed_id", "gold_code", "expected_output"];

/// Parses a task file (a JSON array of task objects) and validates every
/// task. `known_feeds`, when given, is checked for each task's feed.
pub fn parse_tasks(json: &str, known_feeds: Option<&BTreeSet<String>>) -> Result<Vec<BenchmarkTask>, TaskError> {
    let doc: Value = serde_json::from_str(json).map_err(|e| schema("", "<document>", format!("{e}")))?;
    let Value::Array(items) = doc else {
        return Err(schema("", "<document>", "expected a JSON array of tasks"));
    };
    let mut tasks = Vec::with_capacity(items.len());
    let mut seen = BTreeSet::new();
    for (i, item) in items.into_iter().enumerate() {
        let id = item.get("task_id").and_then(Value::as_str).map_or_else(|| format!("#{i}"), ToString::to_string);
        let Value::Object(obj) = &item else {
            return Err(schema(&id, "<task>", "expected an object"));
        };
        for field in REQUIRED_FIELDS {
            if obj.get(field).is_none_or(Value::is_null) {
                return Err(schema(&id, field, "missing"));
            }
        }
        if let Some(c) = obj.get("category").and_then(Value::as_str) {
            if Category::from_str_opt(c).is_none() {
                return Err(schema(&id, "category", format!("unknown category {c:?}")));
            }
        }
        let task: BenchmarkTask = serde_json::from_value(item).map_err(|e| schema(&id, "<task>", format!("{e}")))?;
        task.validate()?;
        if let Some(feeds) = known_feeds {
            if !feeds.contains(&task.feed_id) {
                return Err(TaskError::UnknownFeed { task_id: task.task_id, feed_id: task.feed_id });
            }
        }
        if !seen.insert(task.task_id.clone()) {
            return Err(TaskError::DuplicateTask(task.task_id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Score {
    Fail,
    Pass,
    ManualReview,
}

impl Score {
    pub fn value(self) -> Option<u8> {
        match self {
            Score::Fail => Some(0),
            Score::Pass => Some(1),
            Score::ManualReview => None,
        }
    }
}

// 0 / 1 / "manual_review" on the wire.
impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.value() {
            Some(v) => s.serialize_u8(v),
            None => s.serialize_str("manual_review"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) if n.as_u64() == Some(0) => Ok(Score::Fail),
            Value::Number(n) if n.as_u64() == Some(1) => Ok(Score::Pass),
            Value::String(s) if s == "manual_review" => Ok(Score::ManualReview),
            other => Err(serde::de::Error::custom(format!("invalid score {other}"))),
        }
    }
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
        _ => None,
    }
}

/// Structural equality with numeric tolerance and text normalization.
pub fn values_match(actual: &Value, expected: &Value, unordered: bool) -> bool {
    match (actual, expected) {
        (_, Value::Number(_)) | (Value::Number(_), _) => match (as_number(actual), as_number(expected)) {
            (Some(a), Some(e)) => libm::fabs(a - e) <= NUMERIC_TOLERANCE,
            _ => false,
        },
        (Value::String(a), Value::String(e)) => normalize_text(a) == normalize_text(e),
        (Value::Array(a), Value::Array(e)) => {
            a.len() == e.len()
                && if unordered {
                    multiset_match(a, e)
                } else {
                    a.iter().zip(e).all(|(x, y)| values_match(x, y, unordered))
                }
        }
        (Value::Object(a), Value::Object(e)) => objects_match(a, e, unordered),
        (a, e) => a == e,
    }
}

fn objects_match(a: &Map<String, Value>, e: &Map<String, Value>, unordered: bool) -> bool {
    a.len() == e.len() && e.iter().all(|(k, ev)| a.get(k).is_some_and(|av| values_match(av, ev, unordered)))
}

// Perfect bipartite matching (augmenting paths); tolerance makes the
// relation non-transitive, so greedy pairing is not enough.
fn multiset_match(a: &[Value], e: &[Value]) -> bool {
    let n = e.len();
    let adj: Vec<Vec<usize>> =
        e.iter().map(|ev| (0..a.len()).filter(|&j| values_match(&a[j], ev, true)).collect()).collect();
    let mut owner: Vec<Option<usize>> = alloc::vec![None; a.len()];
    fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    (0..n).all(|i| augment(i, &adj, &mut owner, &mut alloc::vec![false; a.len()]))
}

/// Grades a result against the gold output. `additional_info` is compared
/// only when the gold output specifies it.
pub fn grade(actual: &ResultObject, expected: &Value, requires_visualization: bool, unordered: bool) -> Score {
    if requires_visualization {
        return Score::ManualReview;
    }
    let Some(exp_answer) = expected.get("answer") else {
        return Score::Fail;
    };
    if !values_match(&actual.answer, exp_answer, unordered) {
        return Score::Fail;
    }
    match expected.get("additional_info") {
        Some(info) if !info.is_null() && !values_match(&actual.additional_info, info, unordered) => Score::Fail,
        _ => Score::Pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeltaT {
    /// Δt_g: main-model generation time over all attempts.
    pub generation_ms: u64,
    /// Δt_e: sandbox execution time over all attempts.
    pub execution_ms: u64,
}

impl DeltaT {
    pub fn total_ms(&self) -> u64 {
        self.generation_ms + self.execution_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub category: Category,
    pub score: Score,
    pub tokens: u64,
    pub delta_t: DeltaT,
    pub attempts: u32,
    pub timed_out: bool,
    pub verdict: Verdict,
    /// Key of this task's transcript in the report.
    pub transcript_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub n: usize,
    pub passed: usize,
    /// Tasks awaiting human review; not part of α.
    pub manual_review: usize,
    /// passed / (n - manual_review); `None` when nothing was graded.
    pub alpha: Option<f64>,
    /// Mean tokens over tasks that did not time out.
    pub mean_tokens: Option<f64>,
    pub mean_delta_t_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: String,
    pub model_id: String,
    pub rows: Vec<CategoryRow>,
    pub overall: CategoryRow,
    pub results: Vec<TaskResult>,
    #[serde(default)]
    pub transcripts: BTreeMap<String, PipelineReport>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn row(label: &str, results: &[&TaskResult]) -> CategoryRow {
    let passed = results.iter().filter(|r| r.score == Score::Pass).count();
    let manual_review = results.iter().filter(|r| r.score == Score::ManualReview).count();
    let graded = results.len() - manual_review;
    let kept = || results.iter().filter(|r| !r.timed_out);
    CategoryRow {
        category: label.to_string(),
        n: results.len(),
        passed,
        manual_review,
        alpha: (graded > 0).then(|| passed as f64 / graded as f64),
        mean_tokens: mean(kept().map(|r| r.tokens as f64)),
        mean_delta_t_ms: mean(kept().map(|r| r.delta_t.total_ms() as f64)),
    }
}

/// Per-category and overall rows. Categories with no tasks are omitted.
pub fn aggregate(results: &[TaskResult]) -> (Vec<CategoryRow>, CategoryRow) {
    let rows = Category::ALL
        .iter()
        .filter_map(|&c| {
            let of: Vec<&TaskResult> = results.iter().filter(|r| r.category == c).collect();
            (!of.is_empty()).then(|| row(c.label(), &of))
        })
        .collect();
    let all: Vec<&TaskResult> = results.iter().collect();
    (rows, row("Summary", &all))
}

/// Models, executor and feeds for a benchmark run.
pub struct BenchEnv<'a> {
    pub feeds: &'a BTreeMap<String, Feed>,
    pub few_shot: Option<&'a FewShotSelector>,
    pub main_model: &'a dyn ChatModel,
    pub aux_model: &'a dyn ChatModel,
    pub executor: &'a dyn Executor,
}

/// Runs one task in a fresh session.
pub fn run_task(task: &BenchmarkTask, env: &BenchEnv<'_>, config: &RunConfig, model_id: &str) -> (TaskResult, PipelineReport) {
    let report = match (env.feeds.get(&task.feed_id), task.query()) {
        (Some(feed), Ok(query)) => {
            let pipeline = Pipeline {
                feed,
                few_shot: env.few_shot,
                main_model: env.main_model,
                aux_model: env.aux_model,
                executor: env.executor,
            };
            let mut session = ChatSession::new(format!("bench-{}", task.task_id), &task.feed_id, model_id);
            pipeline.handle_query(&mut session, &query, config, &mut NoStages)
        }
        (None, _) => PipelineReport::failed(format!("feed {:?} is not loaded", task.feed_id)),
        (_, Err(e)) => PipelineReport::failed(e.to_string()),
    };
    let timed_out = report.outcome_kind == Some(OutcomeKind::Timeout);
    let score = if task.requires_visualization {
        Score::ManualReview
    } else if timed_out || report.answer.is_none() {
        Score::Fail
    } else {
        let actual = ResultObject {
            answer: report.answer.clone().unwrap_or(Value::Null),
            additional_info: report.additional_info.clone().unwrap_or(Value::Null),
            visualization: report.visualization.clone(),
        };
        grade(&actual, &task.expected_output, false, task.unordered)
    };
    let result = TaskResult {
        task_id: task.task_id.clone(),
        category: task.category,
        score,
        tokens: report.tokens,
        delta_t: DeltaT { generation_ms: report.timings.generation_ms, execution_ms: report.timings.execution_ms },
        attempts: report.attempts,
        timed_out,
        verdict: report.verdict,
        transcript_ref: task.task_id.clone(),
    };
    (result, report)
}

/// Runs every task sequentially. Per-task failures are recorded, never
/// fatal. Results are ordered by task id.
pub fn run_benchmark(tasks: &[BenchmarkTask], env: &BenchEnv<'_>, config: &RunConfig, model_id: &str) -> BenchmarkReport {
    let mut results = Vec::with_capacity(tasks.len());
    let mut transcripts = BTreeMap::new();
    for task in tasks {
        let (r, t) = run_task(task, env, config, model_id);
        transcripts.insert(r.transcript_ref.clone(), t);
        results.push(r);
    }
    assemble_report(results, transcripts, config, model_id)
}

/// Builds a report from results gathered in any order.
pub fn assemble_report(
    mut results: Vec<TaskResult>,
    transcripts: BTreeMap<String, PipelineReport>,
    config: &RunConfig,
    model_id: &str,
) -> BenchmarkReport {
    results.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let (rows, overall) = aggregate(&results);
    BenchmarkReport { config: config.mode.as_str().to_string(), model_id: model_id.to_string(), rows, overall, results, transcripts }
}

fn thousands(x: f64) -> String {
    let n = libm::round(x) as u64;
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn render_row(r: &CategoryRow) -> String {
    let alpha = r.alpha.map_or("n/a".to_string(), |a| format!("{a:.2} [{}]", r.passed));
    let t = r.mean_tokens.map_or("n/a".to_string(), thousands);
    let dt = r.mean_delta_t_ms.map_or("n/a".to_string(), |ms| format!("{:.1}", ms / 1000.0));
    format!("| {} | {} | {} | {} | {} | {} |", r.category, r.n, alpha, t, dt, r.manual_review)
}

/// Markdown table with the columns Category, N, α [N], T, Δt and the
/// number of tasks pending manual review.
pub fn render_table(report: &BenchmarkReport) -> String {
    let mut out = format!("{} / {}\n\n", report.model_id, report.config);
    out.push_str("| Category | N | α [N] | T | Δt (s) | Manual |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for r in report.rows.iter().chain(core::iter::once(&report.overall)) {
        out.push_str(&render_row(r));
        out.push('\n');
    }
    out
}

/// Deterministic stand-in for the main and auxiliary models that answers
/// every benchmark query with its task's gold code.
///
/// Moderation always allows, summaries are a fixed sentence, and token counts
/// are a fixed function of the text (one token per four characters).
#[derive(Debug, Clone, Default)]
pub struct GoldCodeModel {
    by_query: BTreeMap<String, String>,
}

impl GoldCodeModel {
    pub fn new(tasks: &[BenchmarkTask]) -> Self {
        let by_query = tasks.iter().filter_map(|t| Some((t.query().ok()?, t.gold_code.clone()))).collect();
        GoldCodeModel { by_query }
    }
}

fn approx_tokens(chars: usize) -> u64 {
    (chars as u64).div_ceil(4).max(1)
}

impl ChatModel for GoldCodeModel {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let b = &req.bundle;
        let text = match b.role_tag {
            RoleTag::Moderation => "ALLOWED".to_string(),
            RoleTag::Summary => "The result object above answers the query.".to_string(),
            RoleTag::Main | RoleTag::ErrorRetry => {
                let query = match b.role_tag {
                    RoleTag::Main => b.user_text.as_str(),
                    _ => b.history.first().map_or("", |t| t.user.as_str()),
                };
                let code = self
                    .by_query
                    .get(query)
                    .ok_or_else(|| LlmError::Script(format!("no gold code for query {query:?}")))?;
                format!("```python\n{}\n```", code.trim_end())
            }
        };
        let input_chars = b.system_text.len()
            + b.user_text.len()
            + b.history.iter().map(|t| t.user.len() + t.assistant.len()).sum::<usize>();
        Ok(LlmResponse {
            input_tokens: approx_tokens(input_chars),
            output_tokens: approx_tokens(text.len()),
            text,
            latency_ms: 0,
            provider_meta: BTreeMap::new(),
        })
    }
}
