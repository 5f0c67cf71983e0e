//! Chat-completion types, the provider seam and the scripted stub.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{PromptBundle, RoleTag};

pub const MODERATION_MAX_TOKENS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused: {0}")]
    ProviderRefusal(String),
    #[error("token budget exceeded: {used} of {limit} used")]
    BudgetExceeded { limit: u64, used: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("stub script: {0}")]
    Script(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub bundle: PromptBundle,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl LlmRequest {
    pub fn new(bundle: PromptBundle, temperature: f64, max_tokens: u32, model_id: impl Into<String>) -> Result<Self, LlmError> {
        let req = LlmRequest { bundle, temperature, max_tokens, model_id: model_id.into() };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(alloc::format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, String>,
}

impl LlmResponse {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

impl<M: ChatModel + ?Sized> ChatModel for &M {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for alloc::boxed::Box<M> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for alloc::sync::Arc<M> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

/// Input plus output tokens over all calls.
pub fn count_session_tokens<'a>(responses: impl IntoIterator<Item = &'a LlmResponse>) -> u64 {
    responses.into_iter().map(LlmResponse::total_tokens).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no code in model output")]
pub struct NoCode;

/// Contents of every fenced block, in order, joined by newlines. Text
/// without a fence is returned whole (trimmed). An unterminated fence runs
/// to the end of the text.
pub fn extract_code_block(text: &str) -> Result<String, NoCode> {
    if text.trim().is_empty() {
        return Err(NoCode);
    }
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    if blocks.is_empty() {
        return Ok(text.trim().to_string());
    }
    let joined = blocks.join("\n");
    if joined.trim().is_empty() {
        return Err(NoCode);
    }
    Ok(joined)
}

/// Per-session token ceiling shared by concurrent calls.
#[derive(Debug)]
pub struct TokenBudget {
    limit: u64,
    used: AtomicU64,
}

impl TokenBudget {
    pub fn new(limit: u64) -> Self {
        TokenBudget { limit, used: AtomicU64::new(0) }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn check(&self) -> Result<(), LlmError> {
        let used = self.used();
        if used >= self.limit {
            return Err(LlmError::BudgetExceeded { limit: self.limit, used });
        }
        Ok(())
    }

    pub fn charge(&self, tokens: u64) {
        self.used.fetch_add(tokens, Ordering::SeqCst);
    }
}

/// Refuses calls once the budget is spent.
pub struct Budgeted<'b, M> {
    pub inner: M,
    pub budget: &'b TokenBudget,
}

impl<M: ChatModel> ChatModel for Budgeted<'_, M> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.budget.check()?;
        let resp = self.inner.complete(req)?;
        self.budget.charge(resp.total_tokens());
        Ok(resp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMatch {
    Role(RoleTag),
    /// Literal substring of the system or user text.
    Contains(String),
}

impl StubMatch {
    fn matches(&self, bundle: &PromptBundle) -> bool {
        match self {
            StubMatch::Role(r) => *r == bundle.role_tag,
            StubMatch::Contains(s) => bundle.user_text.contains(s.as_str()) || bundle.system_text.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubFailure {
    Transport,
    Auth,
    Refusal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    #[serde(rename = "match")]
    pub matcher: StubMatch,
    #[serde(default)]
    pub response: String,
    /// Simulated (input, output) token usage.
    #[serde(default)]
    pub tokens: (u64, u64),
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<StubFailure>,
}

impl StubEntry {
    pub fn role(role: RoleTag, response: impl Into<String>, tokens: (u64, u64)) -> Self {
        StubEntry { matcher: StubMatch::Role(role), response: response.into(), tokens, latency_ms: 0, fail: None }
    }

    pub fn contains(needle: impl Into<String>, response: impl Into<String>, tokens: (u64, u64)) -> Self {
        StubEntry {
            matcher: StubMatch::Contains(needle.into()),
            response: response.into(),
            tokens,
            latency_ms: 0,
            fail: None,
        }
    }

    pub fn failing(role: RoleTag, fail: StubFailure) -> Self {
        StubEntry { matcher: StubMatch::Role(role), response: String::new(), tokens: (0, 0), latency_ms: 0, fail: Some(fail) }
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StubScript {
    pub entries: Vec<StubEntry>,
}

impl StubScript {
    pub fn new(entries: Vec<StubEntry>) -> Self {
        StubScript { entries }
    }

    /// Sum of every entry's scripted tokens.
    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.tokens.0 + e.tokens.1).sum()
    }
}

/// Answers each request with the first unused script entry that matches it.
#[derive(Debug)]
pub struct StubProvider {
    script: StubScript,
    used: Vec<AtomicBool>,
}

impl StubProvider {
    pub fn new(script: StubScript) -> Self {
        let used = script.entries.iter().map(|_| AtomicBool::new(false)).collect();
        StubProvider { script, used }
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !u.load(Ordering::SeqCst)).count()
    }
}

impl ChatModel for StubProvider {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        for (entry, used) in self.script.entries.iter().zip(&self.used) {
            if !entry.matcher.matches(&req.bundle) {
                continue;
            }
            if used.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
                continue;
            }
            match entry.fail {
                Some(StubFailure::Transport) => return Err(LlmError::Transport("scripted transport failure".into())),
                Some(StubFailure::Auth) => return Err(LlmError::Auth("scripted auth failure".into())),
                Some(StubFailure::Refusal) => return Err(LlmError::ProviderRefusal("scripted refusal".into())),
                None => {}
            }
            if entry.response.is_empty() {
                return Err(LlmError::ProviderRefusal("empty response".into()));
            }
            let mut provider_meta = BTreeMap::new();
            provider_meta.insert("provider".to_string(), "stub".to_string());
            return Ok(LlmResponse {
                text: entry.response.clone(),
                input_tokens: entry.tokens.0,
                output_tokens: entry.tokens.1,
                latency_ms: entry.latency_ms,
                provider_meta,
            });
        }
        Err(LlmError::Script(alloc::format!("no unused entry matches a {:?} request", req.bundle.role_tag)))
    }
}
