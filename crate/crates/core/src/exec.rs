//! Results of running generated code, and the executor seam.
//!
//! The real executor is an out-of-process sandbox worker reached over a
//! socket (see the `transit-ask` crate). The two in-process executors here
//! replay scripted outcomes so the pipeline can be exercised without it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// What generated code leaves in its `result` variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultObject {
    pub answer: Value,
    #[serde(default)]
    pub additional_info: Value,
    /// Already-serialized payload (`{"kind": "table" | "map-layers" | "figure", ...}`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visualization: Option<Value>,
}

impl ResultObject {
    pub fn new(answer: impl Into<Value>) -> Self {
        ResultObject { answer: answer.into(), additional_info: Value::Null, visualization: None }
    }

    pub fn with_info(mut self, info: impl Into<Value>) -> Self {
        self.additional_info = info.into();
        self
    }

    pub fn with_visualization(mut self, payload: Value) -> Self {
        self.visualization = Some(payload);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("JSON values always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTriple {
    #[serde(rename = "type")]
    pub error_type: String,
    pub message: String,
    pub relevant_code: String,
}

impl ErrorTriple {
    pub fn new(error_type: impl Into<String>, message: impl Into<String>, relevant_code: impl Into<String>) -> Self {
        ErrorTriple { error_type: error_type.into(), message: message.into(), relevant_code: relevant_code.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Success,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeWire")]
pub struct ExecutionOutcome {
    pub kind: OutcomeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultObject>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorTriple>,
    pub exec_duration_ms: u64,
}

#[derive(Deserialize)]
struct OutcomeWire {
    kind: OutcomeKind,
    #[serde(default)]
    result: Option<ResultObject>,
    #[serde(default)]
    error: Option<ErrorTriple>,
    #[serde(default)]
    exec_duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("inconsistent execution outcome: {0}")]
pub struct InvalidOutcome(pub &'static str);

impl TryFrom<OutcomeWire> for ExecutionOutcome {
    type Error = InvalidOutcome;

    fn try_from(w: OutcomeWire) -> Result<Self, Self::Error> {
        let o = ExecutionOutcome { kind: w.kind, result: w.result, error: w.error, exec_duration_ms: w.exec_duration_ms };
        o.validate()?;
        Ok(o)
    }
}

impl ExecutionOutcome {
    pub fn success(result: ResultObject, exec_duration_ms: u64) -> Self {
        ExecutionOutcome { kind: OutcomeKind::Success, result: Some(result), error: None, exec_duration_ms }
    }

    pub fn error(error: ErrorTriple, exec_duration_ms: u64) -> Self {
        ExecutionOutcome { kind: OutcomeKind::Error, result: None, error: Some(error), exec_duration_ms }
    }

    pub fn timeout(exec_duration_ms: u64) -> Self {
        ExecutionOutcome { kind: OutcomeKind::Timeout, result: None, error: None, exec_duration_ms }
    }

    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }

    /// `success` iff a result is present, `error` iff an error triple is.
    pub fn validate(&self) -> Result<(), InvalidOutcome> {
        if (self.kind == OutcomeKind::Success) != self.result.is_some() {
            return Err(InvalidOutcome("result must be present exactly for successes"));
        }
        if (self.kind == OutcomeKind::Error) != self.error.is_some() {
            return Err(InvalidOutcome("error triple must be present exactly for errors"));
        }
        if self.result.as_ref().is_some_and(|r| r.answer.is_null()) {
            return Err(InvalidOutcome("result has no answer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub request_id: String,
    pub feed_id: String,
    pub code: String,
    pub timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutorError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("sandbox protocol error: {0}")]
    Protocol(String),
}

pub trait Executor: Send + Sync {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionOutcome, ExecutorError>;
}

impl<E: Executor + ?Sized> Executor for &E {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionOutcome, ExecutorError> {
        (**self).execute(req)
    }
}

/// Hands out a fixed sequence of outcomes, one per call.
#[derive(Debug, Default)]
pub struct ScriptedExecutor {
    outcomes: Vec<ExecutionOutcome>,
    next: AtomicUsize,
}

impl ScriptedExecutor {
    pub fn new(outcomes: Vec<ExecutionOutcome>) -> Self {
        ScriptedExecutor { outcomes, next: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&self, _req: &ExecutionRequest) -> Result<ExecutionOutcome, ExecutorError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        self.outcomes
            .get(i)
            .cloned()
            .ok_or_else(|| ExecutorError::SandboxUnavailable("scripted outcomes exhausted".to_string()))
    }
}

/// Maps exact snippets (compared after trimming) to outcomes; anything
/// else fails with a `NameError`-style error triple.
#[derive(Debug, Default)]
pub struct ReplayExecutor {
    known: BTreeMap<String, ExecutionOutcome>,
    calls: AtomicUsize,
}

impl ReplayExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: &str, outcome: ExecutionOutcome) {
        self.known.insert(code.trim().to_string(), outcome);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Executor for ReplayExecutor {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionOutcome, ExecutorError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.known.get(req.code.trim()).cloned().unwrap_or_else(|| {
            ExecutionOutcome::error(
                ErrorTriple::new("NameError", "snippet not recognized by replay executor", req.code.clone()),
                0,
            )
        }))
    }
}
