//! Service configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! sandbox = "tcp://127.0.0.1:7878"
//! models = ["gpt-4o", "claude-3-5-sonnet-20240620"]
//!
//! [run]            # keys mirror RunConfig
//! max_retries = 3
//! few_shot_k = 3
//!
//! [providers]
//! openai_endpoint = "https://api.openai.com"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use transit_ask_core::pipeline::RunConfig;

use crate::providers::{ProviderSettings, ANTHROPIC_ENDPOINT, OPENAI_ENDPOINT};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub sandbox: String,
    /// Main models offered to clients.
    pub models: Vec<String>,
    /// Overrides the bundled few-shot corpus.
    pub few_shot_corpus: Option<PathBuf>,
    pub feeds_dir: Option<PathBuf>,
    pub run: RunConfig,
    pub providers: ProvidersConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            sandbox: "tcp://127.0.0.1:7878".into(),
            models: vec!["gpt-4o".into(), "claude-3-5-sonnet-20240620".into()],
            few_shot_corpus: None,
            feeds_dir: None,
            run: RunConfig::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub openai_endpoint: String,
    pub anthropic_endpoint: String,
    pub request_timeout_s: u64,
    pub backoff_ms: u64,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        ProvidersConfig {
            openai_endpoint: OPENAI_ENDPOINT.into(),
            anthropic_endpoint: ANTHROPIC_ENDPOINT.into(),
            request_timeout_s: 300,
            backoff_ms: 500,
        }
    }
}

impl ProvidersConfig {
    pub fn settings(&self) -> ProviderSettings {
        ProviderSettings {
            openai_endpoint: self.openai_endpoint.clone(),
            anthropic_endpoint: self.anthropic_endpoint.clone(),
            request_timeout: Duration::from_secs(self.request_timeout_s),
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use transit_ask_core::pipeline::Mode;

    #[test]
    fn empty_is_default() {
        let c = ServiceConfig::parse("").unwrap();
        assert_eq!(c.run, RunConfig::default());
        assert_eq!(c.models.len(), 2);
    }

    #[test]
    fn run_section_mirrors_run_config() {
        let c = ServiceConfig::parse("[run]\nmode = \"baseline\"\nmax_retries = 1\nexec_timeout_s = 60\n").unwrap();
        assert_eq!(c.run.mode, Mode::Baseline);
        assert_eq!(c.run.max_retries, 1);
        assert_eq!(c.run.exec_timeout_s, 60);
        assert_eq!(c.run.main_temperature, 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::parse("lisen = \"x\"").is_err());
    }
}
