//! Chat-completion adapters for the two vendor APIs and the scripted stub.
//!
//! Providers are picked by model id prefix: `gpt-`/`o1`/`o3`/`o4` go to the
//! OpenAI wire format, `claude-` to Anthropic's, `stub:<path>` loads a stub
//! script file.

use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;
use transit_ask_core::llm::{ChatModel, LlmError, LlmRequest, LlmResponse, StubProvider, StubScript};
use transit_ask_core::prompt::PromptBundle;

pub const OPENAI_KEY_VAR: &str = "LLM_API_KEY_OPENAI";
pub const ANTHROPIC_KEY_VAR: &str = "LLM_API_KEY_ANTHROPIC";
pub const OPENAI_ENDPOINT: &str = "https://api.openai.com";
pub const ANTHROPIC_ENDPOINT: &str = "https://api.anthropic.com";
const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Transport retries after the first attempt.
pub const TRANSPORT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no provider for model id {0:?}")]
    UnknownModel(String),
    #[error("environment variable {0} is not set")]
    MissingKey(&'static str),
    #[error("stub script {path}: {reason}")]
    StubScript { path: String, reason: String },
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderKind {
    OpenAi,
    Anthropic,
    Stub(String),
}

pub fn provider_kind(model_id: &str) -> Result<ProviderKind, ProviderError> {
    if let Some(path) = model_id.strip_prefix("stub:") {
        return Ok(ProviderKind::Stub(path.to_string()));
    }
    let m = model_id.to_ascii_lowercase();
    if m.starts_with("gpt-") || m.starts_with("o1") || m.starts_with("o3") || m.starts_with("o4") {
        Ok(ProviderKind::OpenAi)
    } else if m.starts_with("claude") {
        Ok(ProviderKind::Anthropic)
    } else {
        Err(ProviderError::UnknownModel(model_id.to_string()))
    }
}

/// Endpoint overrides and HTTP settings.
#[derive(Debug, Clone)]
pub struct ProviderSettings {
    pub openai_endpoint: String,
    pub anthropic_endpoint: String,
    pub request_timeout: Duration,
    /// First backoff delay; doubles on each transport retry.
    pub backoff: Duration,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            openai_endpoint: OPENAI_ENDPOINT.to_string(),
            anthropic_endpoint: ANTHROPIC_ENDPOINT.to_string(),
            request_timeout: Duration::from_secs(300),
            backoff: Duration::from_millis(500),
        }
    }
}

pub fn load_stub_script(path: &Path) -> Result<StubScript, ProviderError> {
    let err = |reason: String| ProviderError::StubScript { path: path.display().to_string(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Builds the provider for `model_id`, reading API keys from the environment.
pub fn build_model(model_id: &str, settings: &ProviderSettings) -> Result<Box<dyn ChatModel>, ProviderError> {
    Ok(match provider_kind(model_id)? {
        ProviderKind::Stub(path) => Box::new(StubProvider::new(load_stub_script(Path::new(&path))?)),
        ProviderKind::OpenAi => {
            let key = std::env::var(OPENAI_KEY_VAR).map_err(|_| ProviderError::MissingKey(OPENAI_KEY_VAR))?;
            Box::new(HttpProvider::new(Vendor::OpenAi, &settings.openai_endpoint, key, settings)?)
        }
        ProviderKind::Anthropic => {
            let key = std::env::var(ANTHROPIC_KEY_VAR).map_err(|_| ProviderError::MissingKey(ANTHROPIC_KEY_VAR))?;
            Box::new(HttpProvider::new(Vendor::Anthropic, &settings.anthropic_endpoint, key, settings)?)
        }
    })
}

/// Whether credentials for `model_id` are present.
pub fn model_available(model_id: &str) -> bool {
    match provider_kind(model_id) {
        Ok(ProviderKind::OpenAi) => std::env::var_os(OPENAI_KEY_VAR).is_some(),
        Ok(ProviderKind::Anthropic) => std::env::var_os(ANTHROPIC_KEY_VAR).is_some(),
        Ok(ProviderKind::Stub(p)) => Path::new(&p).is_file(),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vendor {
    OpenAi,
    Anthropic,
}

pub struct HttpProvider {
    vendor: Vendor,
    url: String,
    key: String,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

fn conversation(bundle: &PromptBundle) -> Vec<Value> {
    let mut messages = Vec::with_capacity(bundle.history.len() * 2 + 1);
    for turn in &bundle.history {
        messages.push(json!({"role": "user", "content": turn.user}));
        messages.push(json!({"role": "assistant", "content": turn.assistant}));
    }
    messages.push(json!({"role": "user", "content": bundle.user_text}));
    messages
}

/// Request body in the vendor's wire format.
pub fn request_body(vendor: Vendor, req: &LlmRequest) -> Value {
    let b = &req.bundle;
    match vendor {
        Vendor::OpenAi => {
            let mut messages = vec![json!({"role": "system", "content": b.system_text})];
            messages.extend(conversation(b));
            json!({
                "model": req.model_id,
                "messages": messages,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            })
        }
        Vendor::Anthropic => json!({
            "model": req.model_id,
            "system": b.system_text,
            "messages": conversation(b),
            // Anthropic accepts temperatures in [0, 1] only.
            "temperature": req.temperature.min(1.0),
            "max_tokens": req.max_tokens,
        }),
    }
}

/// Text and (input, output) usage from a vendor response body.
pub fn parse_response(vendor: Vendor, body: &Value) -> Result<(String, u64, u64), LlmError> {
    let u = |v: &Value, k: &str| v.get(k).and_then(Value::as_u64).unwrap_or(0);
    let (text, input, output) = match vendor {
        Vendor::OpenAi => {
            let choice = body.pointer("/choices/0").ok_or_else(|| LlmError::ProviderRefusal("no choices".into()))?;
            if let Some(refusal) = choice.pointer("/message/refusal").and_then(Value::as_str) {
                return Err(LlmError::ProviderRefusal(refusal.to_string()));
            }
            let text = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or("").to_string();
            let usage = body.get("usage").cloned().unwrap_or(Value::Null);
            (text, u(&usage, "prompt_tokens"), u(&usage, "completion_tokens"))
        }
        Vendor::Anthropic => {
            let text = body
                .get("content")
                .and_then(Value::as_array)
                .map(|parts| {
                    parts
                        .iter()
                        .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                        .filter_map(|p| p.get("text").and_then(Value::as_str))
                        .collect::<Vec<_>>()
                        .join("")
                })
                .unwrap_or_default();
            let usage = body.get("usage").cloned().unwrap_or(Value::Null);
            (text, u(&usage, "input_tokens"), u(&usage, "output_tokens"))
        }
    };
    if text.trim().is_empty() {
        return Err(LlmError::ProviderRefusal("empty completion".into()));
    }
    Ok((text, input, output))
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> LlmError {
    let detail = format!("HTTP {status}: {}", body.chars().take(500).collect::<String>());
    match status.as_u16() {
        401 | 403 => LlmError::Auth(detail),
        408 | 409 | 429 => LlmError::Transport(detail),
        s if s >= 500 => LlmError::Transport(detail),
        _ => LlmError::InvalidRequest(detail),
    }
}

impl HttpProvider {
    pub fn new(vendor: Vendor, endpoint: &str, key: String, settings: &ProviderSettings) -> Result<Self, ProviderError> {
        let path = match vendor {
            Vendor::OpenAi => "/v1/chat/completions",
            Vendor::Anthropic => "/v1/messages",
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.request_timeout)
            .build()
            .map_err(|e| ProviderError::Client(e.to_string()))?;
        Ok(HttpProvider {
            vendor,
            url: format!("{}{path}", endpoint.trim_end_matches('/')),
            key,
            client,
            backoff: settings.backoff,
        })
    }

    fn attempt(&self, body: &Value) -> Result<(String, u64, u64, Value), LlmError> {
        let mut rb = self.client.post(&self.url).json(body);
        rb = match self.vendor {
            Vendor::OpenAi => rb.bearer_auth(&self.key),
            Vendor::Anthropic => rb.header("x-api-key", &self.key).header("anthropic-version", ANTHROPIC_VERSION),
        };
        let resp = rb.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let json: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Transport(format!("invalid JSON body: {e}")))?;
        let (t, i, o) = parse_response(self.vendor, &json)?;
        Ok((t, i, o, json))
    }
}

impl ChatModel for HttpProvider {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        let body = request_body(self.vendor, req);
        let start = Instant::now();
        let mut delay = self.backoff;
        let mut tries = 0;
        let (text, input_tokens, output_tokens, raw) = loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && tries < TRANSPORT_RETRIES => {
                    tries += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => break other?,
            }
        };
        let mut provider_meta = std::collections::BTreeMap::new();
        provider_meta.insert("provider".into(), format!("{:?}", self.vendor).to_lowercase());
        provider_meta.insert("transport_retries".into(), tries.to_string());
        for key in ["id", "model", "stop_reason"] {
            if let Some(v) = raw.get(key).and_then(Value::as_str) {
                provider_meta.insert(key.into(), v.into());
            }
        }
        if let Some(v) = raw.pointer("/choices/0/finish_reason").and_then(Value::as_str) {
            provider_meta.insert("finish_reason".into(), v.into());
        }
        Ok(LlmResponse {
            text,
            input_tokens,
            output_tokens,
            latency_ms: start.elapsed().as_millis() as u64,
            provider_meta,
        })
    }
}
