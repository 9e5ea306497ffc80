//! Completion backends: remote chat and math-OCR services, a scripted mock,
//! and a content-addressed response cache in front of any of them.

mod cache;
mod fingerprint;
mod http;
mod limits;
mod mock;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use cache::{cached_complete, CachedBackend, ResponseCache};
pub use fingerprint::{prompt_fingerprint, request_fingerprint};
pub use http::{ChatBackend, HttpSettings, MathOcrBackend};
pub use limits::{Limits, Throttle};
pub use mock::{FixtureEntry, FixtureFile, FixtureMatcher, ScriptedBackend};

/// Environment variable consulted for API credentials when a backend block
/// does not name its own.
pub const DEFAULT_API_KEY_ENV: &str = "RUBRICON_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserPart {
    Text { text: String },
    Image { bytes: Vec<u8>, media_type: String },
}

impl UserPart {
    pub fn text(text: impl Into<String>) -> Self {
        UserPart::Text { text: text.into() }
    }

    pub fn image(bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        UserPart::Image {
            bytes,
            media_type: media_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub backend_name: String,
    pub system_prompt: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub max_output: u32,
    /// Semantic label such as `ocr`, `grade` or `paraphrase`.
    pub request_tag: String,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_parts.is_empty() {
            return Err(BackendError::InvalidRequest("request has no user parts".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Concatenated text parts, used by fixture matchers.
    pub fn text_content(&self) -> String {
        let mut out = self.system_prompt.clone();
        for part in &self.user_parts {
            if let UserPart::Text { text } = part {
                out.push('\n');
                out.push_str(text);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub backend_name: String,
    pub latency: Duration,
    pub cached: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request refused with status {status}: {body}")]
    Refusal { status: u16, body: String },
    #[error("request budget exhausted: {0}")]
    Budget(String),
    #[error("cache i/o error: {0}")]
    CacheIo(String),
    #[error("no scripted response for request {fingerprint} ({tag})")]
    FixtureMiss { fingerprint: String, tag: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// `sample_index` distinguishes repeated identical prompts.
    async fn complete(&self, request: &ModelRequest, sample_index: u64) -> Result<ModelResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Chat,
    MathOcr,
    Mock,
}

fn default_parallel() -> usize {
    4
}

fn default_retries() -> u32 {
    3
}

/// Backend block of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpm: Option<u32>,
    /// Total attempts per request for retryable failures.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_requests: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_header: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Fixture directory for `mock` backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<String>,
}

impl BackendConfig {
    pub fn mock(name: impl Into<String>, fixtures: impl Into<String>) -> Self {
        BackendConfig {
            name: name.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            max_parallel: default_parallel(),
            rpm: None,
            retries: default_retries(),
            max_requests: None,
            api_key_env: None,
            auth_header: None,
            timeout_secs: None,
            fixtures: Some(fixtures.into()),
        }
    }

    fn limits(&self) -> Limits {
        Limits {
            max_parallel: self.max_parallel.max(1),
            rpm: self.rpm,
            max_requests: self.max_requests,
        }
    }

    fn http_settings(&self) -> Result<HttpSettings, BackendError> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config(format!("backend `{}` needs an endpoint", self.name)))?;
        let key_env = self.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        Ok(HttpSettings {
            endpoint,
            model: self.model.clone().unwrap_or_default(),
            api_key: std::env::var(key_env).ok(),
            auth_header: self.auth_header.clone().unwrap_or_else(|| "Authorization".into()),
            attempts: self.retries.max(1),
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(self.timeout_secs.unwrap_or(120)),
        })
    }
}

/// Instantiate a backend; relative fixture paths resolve against `base_dir`.
pub fn build_backend(config: &BackendConfig, base_dir: &Path) -> Result<Arc<dyn Backend>, BackendError> {
    Ok(match config.kind {
        BackendKind::Mock => {
            let dir = config
                .fixtures
                .as_ref()
                .ok_or_else(|| BackendError::Config(format!("mock backend `{}` needs `fixtures`", config.name)))?;
            Arc::new(ScriptedBackend::from_dir(&config.name, &base_dir.join(dir))?)
        }
        BackendKind::Chat => Arc::new(ChatBackend::new(&config.name, config.http_settings()?, config.limits())?),
        BackendKind::MathOcr => {
            Arc::new(MathOcrBackend::new(&config.name, config.http_settings()?, config.limits())?)
        }
    })
}
