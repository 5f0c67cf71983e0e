//! Per-query control flow: moderate, generate and execute (retrying on
//! errors), summarize.
//!
//! ```text
//! query ─► moderation ──Block──► report(blocked)
//!              │Allow
//!              ▼
//!          main prompt ─► model ─► extract code ─► executor
//!              ▲                                     │error / timeout
//!              └──── error prompt (retry temp) ◄─────┘  while attempts ≤ 1 + max_retries
//!                                                    │success
//!                                                    ▼
//!                                          summary model ─► report(answered)
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exec::{ErrorTriple, ExecutionOutcome, ExecutionRequest, Executor, OutcomeKind, ResultObject};
use crate::feed::Feed;
use crate::fewshot::FewShotSelector;
use crate::llm::{extract_code_block, ChatModel, LlmError, LlmRequest, LlmResponse, MODERATION_MAX_TOKENS};
use crate::prompt::{
    build_error_prompt, build_main_prompt, build_moderation_prompt, build_summary_prompt, PromptBundle, RoleTag, Turn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Zero-shot generation, no retries.
    #[serde(rename = "baseline")]
    Baseline,
    /// Dynamic few-shot examples plus the error-feedback loop.
    #[serde(rename = "transitgpt-plus", alias = "transitgpt_plus")]
    TransitGptPlus,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::TransitGptPlus => "transitgpt-plus",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "transitgpt-plus" | "transitgpt_plus" => Ok(Mode::TransitGptPlus),
            other => Err(format!("unknown mode {other:?} (expected baseline or transitgpt-plus)")),
        }
    }
}

/// Largest completion the provider allows for a model.
pub fn provider_max_tokens(model_id: &str) -> u32 {
    let m = model_id.to_ascii_lowercase();
    if m.starts_with("gpt-4o") {
        16_384
    } else if m.starts_with("claude") {
        8_192
    } else {
        4_096
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub main_temperature: f64,
    pub retry_temperature: f64,
    pub aux_temperature: f64,
    pub max_retries: u32,
    pub exec_timeout_s: u64,
    pub few_shot_k: usize,
    pub mode: Mode,
    /// Provider maximum when unset.
    pub main_max_tokens: Option<u32>,
    pub summary_max_tokens: Option<u32>,
    pub moderation_max_tokens: u32,
    /// Most recent turns included in the main prompt.
    pub history_window: usize,
    /// Model used for moderation and summaries.
    pub aux_model_id: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            main_temperature: 0.3,
            retry_temperature: 0.5,
            aux_temperature: 0.7,
            max_retries: 3,
            exec_timeout_s: 180,
            few_shot_k: 3,
            mode: Mode::TransitGptPlus,
            main_max_tokens: None,
            summary_max_tokens: None,
            moderation_max_tokens: MODERATION_MAX_TOKENS,
            history_window: 6,
            aux_model_id: "gpt-4o-mini".to_string(),
        }
    }
}

impl RunConfig {
    pub fn baseline() -> Self {
        RunConfig { mode: Mode::Baseline, ..Default::default() }
    }

    /// The configuration actually run: baseline forces zero examples and
    /// zero retries.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        if c.mode == Mode::Baseline {
            c.few_shot_k = 0;
            c.max_retries = 0;
        }
        c
    }

    pub fn max_attempts(&self) -> u32 {
        1 + self.effective().max_retries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub feed_id: String,
    pub model_id: String,
    history: Vec<Turn>,
    pub token_total: u64,
    queries: u64,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>, feed_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        ChatSession {
            session_id: session_id.into(),
            feed_id: feed_id.into(),
            model_id: model_id.into(),
            history: Vec::new(),
            token_total: 0,
            queries: 0,
        }
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    fn window(&self, n: usize) -> &[Turn] {
        &self.history[self.history.len().saturating_sub(n)..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationVerdict {
    Allow,
    Block,
}

/// Reads a one-word verdict. Anything unrecognized is `None`.
pub fn parse_verdict(text: &str) -> Option<ModerationVerdict> {
    let word: String = text
        .trim()
        .split(|c: char| !c.is_ascii_alphabetic())
        .find(|w| !w.is_empty())?
        .to_ascii_uppercase();
    match word.as_str() {
        "ALLOWED" | "ALLOW" => Some(ModerationVerdict::Allow),
        "BLOCKED" | "BLOCK" => Some(ModerationVerdict::Block),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Moderating,
    Generating,
    Executing,
    Retrying { retry: u32, max_retries: u32 },
    Summarizing,
    Done,
}

pub trait StageSink {
    fn stage(&mut self, stage: Stage);
}

impl<F: FnMut(Stage)> StageSink for F {
    fn stage(&mut self, stage: Stage) {
        self(stage)
    }
}

/// Discards stage events.
pub struct NoStages;

impl StageSink for NoStages {
    fn stage(&mut self, _stage: Stage) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub moderation_ms: u64,
    /// Sum of main-model latencies over all attempts.
    pub generation_ms: u64,
    /// Sum of sandbox durations over all attempts.
    pub execution_ms: u64,
    pub summary_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: RoleTag,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub system_text: String,
    pub user_text: String,
    pub response_text: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Answered,
    Blocked,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub verdict: Verdict,
    pub summary_markdown: Option<String>,
    pub answer: Option<Value>,
    pub additional_info: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visualization: Option<Value>,
    pub code: Option<String>,
    pub attempts: u32,
    pub tokens: u64,
    pub timings: Timings,
    /// Kind of the last execution, if any code ran.
    pub outcome_kind: Option<OutcomeKind>,
    pub last_error: Option<ErrorTriple>,
    pub few_shot_ids: Vec<String>,
    pub diagnostics: Vec<String>,
    pub calls: Vec<CallRecord>,
    /// Number of executor invocations.
    pub executions: u32,
}

impl PipelineReport {
    fn empty() -> Self {
        PipelineReport {
            verdict: Verdict::Failed,
            summary_markdown: None,
            answer: None,
            additional_info: None,
            visualization: None,
            code: None,
            attempts: 0,
            tokens: 0,
            timings: Timings::default(),
            outcome_kind: None,
            last_error: None,
            few_shot_ids: Vec::new(),
            diagnostics: Vec::new(),
            calls: Vec::new(),
            executions: 0,
        }
    }

    /// A failed report carrying one diagnostic and nothing else.
    pub fn failed(diagnostic: impl Into<String>) -> Self {
        let mut r = Self::empty();
        r.diagnostics.push(diagnostic.into());
        r
    }

    pub fn main_calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.calls.iter().filter(|c| matches!(c.role, RoleTag::Main | RoleTag::ErrorRetry))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub outcome: ExecutionOutcome,
    pub code: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Executor(#[from] crate::exec::ExecutorError),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
}

/// Everything a query needs besides the session. Cheap to construct per
/// query; holds only borrows.
pub struct Pipeline<'a> {
    pub feed: &'a Feed,
    pub few_shot: Option<&'a FewShotSelector>,
    pub main_model: &'a dyn ChatModel,
    pub aux_model: &'a dyn ChatModel,
    pub executor: &'a dyn Executor,
}

impl Pipeline<'_> {
    fn call(
        &self,
        model: &dyn ChatModel,
        bundle: PromptBundle,
        temperature: f64,
        max_tokens: u32,
        model_id: &str,
        report: &mut PipelineReport,
    ) -> Result<LlmResponse, LlmError> {
        let mut record = CallRecord {
            role: bundle.role_tag,
            model_id: model_id.to_string(),
            temperature,
            max_tokens,
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            response_text: None,
            input_tokens: 0,
            output_tokens: 0,
            latency_ms: 0,
            error: None,
        };
        let result = LlmRequest::new(bundle, temperature, max_tokens, model_id).and_then(|req| model.complete(&req));
        match &result {
            Ok(resp) => {
                record.response_text = Some(resp.text.clone());
                record.input_tokens = resp.input_tokens;
                record.output_tokens = resp.output_tokens;
                record.latency_ms = resp.latency_ms;
                report.tokens += resp.total_tokens();
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        report.calls.push(record);
        result
    }

    /// Fail-closed transit-relevance gate.
    pub fn moderate(&self, query: &str, config: &RunConfig, report: &mut PipelineReport) -> ModerationVerdict {
        let bundle = match build_moderation_prompt(query) {
            Ok(b) => b,
            Err(e) => {
                report.diagnostics.push(format!("moderation: {e}"));
                return ModerationVerdict::Block;
            }
        };
        let resp =
            self.call(self.aux_model, bundle, config.aux_temperature, config.moderation_max_tokens, &config.aux_model_id, report);
        match resp {
            Ok(r) => {
                report.timings.moderation_ms += r.latency_ms;
                parse_verdict(&r.text).unwrap_or_else(|| {
                    report.diagnostics.push(format!("moderation: unrecognized verdict {:?}", r.text));
                    ModerationVerdict::Block
                })
            }
            Err(e) => {
                report.diagnostics.push(format!("moderation: {e}"));
                ModerationVerdict::Block
            }
        }
    }

    /// Main-model generation and execution with the error-feedback loop.
    pub fn generate_and_execute(
        &self,
        session: &ChatSession,
        query: &str,
        config: &RunConfig,
        report: &mut PipelineReport,
        sink: &mut dyn StageSink,
    ) -> Result<Generation, PipelineError> {
        let config = config.effective();
        let examples = match (self.few_shot, config.few_shot_k) {
            (Some(sel), k) if k > 0 => sel.select(query, k).map_err(|_| LlmError::InvalidRequest("few-shot".into()))?,
            _ => Vec::new(),
        };
        report.few_shot_ids = examples.iter().map(|s| s.example.id.clone()).collect();
        let example_refs: Vec<_> = examples.iter().map(|s| s.example).collect();
        let mut bundle = build_main_prompt(query, session.window(config.history_window), &example_refs, self.feed);
        let max_tokens = config.main_max_tokens.unwrap_or_else(|| provider_max_tokens(&session.model_id));
        let max_attempts = 1 + config.max_retries;

        let mut attempt = 0;
        loop {
            attempt += 1;
            report.attempts = attempt;
            let temperature = if attempt == 1 {
                sink.stage(Stage::Generating);
                config.main_temperature
            } else {
                sink.stage(Stage::Retrying { retry: attempt - 1, max_retries: config.max_retries });
                config.retry_temperature
            };
            let resp = self.call(self.main_model, bundle.clone(), temperature, max_tokens, &session.model_id, report)?;
            report.timings.generation_ms += resp.latency_ms;

            let code = extract_code_block(&resp.text).unwrap_or_default();
            let outcome = if code.is_empty() {
                ExecutionOutcome::error(
                    ErrorTriple::new("NoCodeError", "the response did not contain a code block", resp.text.clone()),
                    0,
                )
            } else {
                sink.stage(Stage::Executing);
                let req = ExecutionRequest {
                    request_id: format!("{}-{}-{}", session.session_id, session.queries, attempt),
                    feed_id: session.feed_id.clone(),
                    code: code.clone(),
                    timeout_s: config.exec_timeout_s,
                };
                report.executions += 1;
                let o = self.executor.execute(&req)?;
                report.timings.execution_ms += o.exec_duration_ms;
                o
            };
            report.outcome_kind = Some(outcome.kind);

            if outcome.is_success() || attempt >= max_attempts {
                report.last_error = retry_error(&outcome, &code, config.exec_timeout_s);
                return Ok(Generation { outcome, code, attempts: attempt });
            }
            let error = retry_error(&outcome, &code, config.exec_timeout_s).expect("non-success outcome");
            report.last_error = Some(error.clone());
            bundle = build_error_prompt(&bundle, &resp.text, &error);
        }
    }

    pub fn summarize(
        &self,
        query: &str,
        result: &ResultObject,
        code: &str,
        config: &RunConfig,
        report: &mut PipelineReport,
    ) -> Result<String, LlmError> {
        let bundle = build_summary_prompt(query, result, code);
        let max_tokens = config.summary_max_tokens.unwrap_or_else(|| provider_max_tokens(&config.aux_model_id));
        let resp = self.call(self.aux_model, bundle, config.aux_temperature, max_tokens, &config.aux_model_id, report)?;
        report.timings.summary_ms += resp.latency_ms;
        Ok(resp.text)
    }

    /// Runs one query through the whole flow. Never fails: problems end up
    /// in the report's verdict and diagnostics.
    pub fn handle_query(
        &self,
        session: &mut ChatSession,
        query: &str,
        config: &RunConfig,
        sink: &mut dyn StageSink,
    ) -> PipelineReport {
        let config = config.effective();
        let mut report = PipelineReport::empty();
        session.queries += 1;

        sink.stage(Stage::Moderating);
        if self.moderate(query, &config, &mut report) == ModerationVerdict::Block {
            report.verdict = Verdict::Blocked;
            return self.finish(session, report, sink);
        }

        let generation = match self.generate_and_execute(session, query, &config, &mut report, sink) {
            Ok(g) => g,
            Err(e) => {
                report.diagnostics.push(format!("generation: {e}"));
                return self.finish(session, report, sink);
            }
        };
        report.code = Some(generation.code.clone());
        let Some(result) = generation.outcome.result.as_ref() else {
            report.diagnostics.push(format!(
                "execution failed after {} attempt(s): {}",
                generation.attempts,
                report.last_error.as_ref().map_or("unknown error".to_string(), |e| format!("{}: {}", e.error_type, e.message)),
            ));
            return self.finish(session, report, sink);
        };
        report.answer = Some(result.answer.clone());
        report.additional_info = Some(result.additional_info.clone());
        report.visualization = result.visualization.clone();

        sink.stage(Stage::Summarizing);
        match self.summarize(query, result, &generation.code, &config, &mut report) {
            Ok(md) => {
                report.verdict = Verdict::Answered;
                session.history.push(Turn::new(query, md.clone()));
                report.summary_markdown = Some(md);
            }
            Err(e) => report.diagnostics.push(format!("summary: {e}")),
        }
        self.finish(session, report, sink)
    }

    fn finish(&self, session: &mut ChatSession, report: PipelineReport, sink: &mut dyn StageSink) -> PipelineReport {
        session.token_total += report.tokens;
        sink.stage(Stage::Done);
        report
    }
}

/// Error triple fed back to the model for a failed outcome.
fn retry_error(outcome: &ExecutionOutcome, code: &str, timeout_s: u64) -> Option<ErrorTriple> {
    match outcome.kind {
        OutcomeKind::Success => None,
        OutcomeKind::Error => {
            let mut e = outcome.error.clone().unwrap_or_else(|| ErrorTriple::new("Error", "unknown error", code));
            if e.relevant_code.trim().is_empty() {
                e.relevant_code = code.to_string();
            }
            if e.error_type.trim().is_empty() {
                e.error_type = "Error".to_string();
            }
            if e.message.trim().is_empty() {
                e.message = "(no message)".to_string();
            }
            Some(e)
        }
        OutcomeKind::Timeout => Some(ErrorTriple::new(
            "ExecutionTimeout",
            format!("execution exceeded the {timeout_s} s time limit"),
            code,
        )),
    }
}
