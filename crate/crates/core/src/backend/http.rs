use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, BackendError, Limits, ModelRequest, ModelResponse, Throttle, UserPart};

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub auth_header: String,
    /// Total attempts for retryable failures (network, 429, 5xx).
    pub attempts: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

struct HttpCore {
    name: String,
    settings: HttpSettings,
    client: reqwest::Client,
    throttle: Throttle,
}

fn data_url(bytes: &[u8], media_type: &str) -> String {
    format!(
        "data:{media_type};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

impl HttpCore {
    fn new(name: &str, settings: HttpSettings, limits: Limits) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpCore {
            name: name.to_string(),
            settings,
            client,
            throttle: Throttle::new(limits),
        })
    }

    /// POST `body`, retrying transient failures with exponential backoff.
    async fn post(&self, body: &Value) -> Result<(Value, Duration), BackendError> {
        self.throttle.charge()?;
        let attempts = self.settings.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.settings.backoff_base * 2u32.saturating_pow(attempt - 1);
                tokio::time::sleep(delay).await;
            }
            let _permit = self.throttle.acquire().await;
            let started = Instant::now();
            let mut req = self.client.post(&self.settings.endpoint).json(body);
            if let Some(key) = &self.settings.api_key {
                let value = if self.settings.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {key}")
                } else {
                    key.clone()
                };
                req = req.header(self.settings.auth_header.as_str(), value);
            }
            let resp = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    tracing::warn!(backend = %self.name, attempt, error = %last_error, "request failed");
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            if status.is_success() {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| BackendError::Transport(format!("malformed response body: {e}")))?;
                return Ok((value, started.elapsed()));
            }
            if status.as_u16() == 429 || status.is_server_error() {
                last_error = format!("status {status}: {text}");
                tracing::warn!(backend = %self.name, attempt, %status, "retryable response");
                continue;
            }
            return Err(BackendError::Refusal {
                status: status.as_u16(),
                body: text,
            });
        }
        Err(BackendError::Transport(format!(
            "giving up after {attempts} attempts: {last_error}"
        )))
    }
}

/// Chat-completion style JSON API (text and image message parts).
pub struct ChatBackend {
    core: HttpCore,
}

impl ChatBackend {
    pub fn new(name: &str, settings: HttpSettings, limits: Limits) -> Result<Self, BackendError> {
        Ok(ChatBackend {
            core: HttpCore::new(name, settings, limits)?,
        })
    }

    /// Request body in the chat-completions wire format.
    pub fn request_body(&self, request: &ModelRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        let content: Vec<Value> = request
            .user_parts
            .iter()
            .map(|part| match part {
                UserPart::Text { text } => json!({"type": "text", "text": text}),
                UserPart::Image { bytes, media_type } => json!({
                    "type": "image_url",
                    "image_url": {"url": data_url(bytes, media_type)}
                }),
            })
            .collect();
        messages.push(json!({"role": "user", "content": content}));
        json!({
            "model": self.core.settings.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "messages": messages,
        })
    }
}

#[async_trait]
impl Backend for ChatBackend {
    fn name(&self) -> &str {
        &self.core.name
    }

    async fn complete(&self, request: &ModelRequest, _sample_index: u64) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let (value, latency) = self.core.post(&self.request_body(request)).await?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))?;
        Ok(ModelResponse {
            text: text.to_string(),
            backend_name: self.core.name.clone(),
            latency,
            cached: false,
        })
    }
}

/// Image-to-LaTeX service. The prompt is ignored; the first image part is
/// forwarded and the returned text is the transcription.
pub struct MathOcrBackend {
    core: HttpCore,
}

impl MathOcrBackend {
    pub fn new(name: &str, settings: HttpSettings, limits: Limits) -> Result<Self, BackendError> {
        Ok(MathOcrBackend {
            core: HttpCore::new(name, settings, limits)?,
        })
    }
}

#[async_trait]
impl Backend for MathOcrBackend {
    fn name(&self) -> &str {
        &self.core.name
    }

    async fn complete(&self, request: &ModelRequest, _sample_index: u64) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let (bytes, media_type) = request
            .user_parts
            .iter()
            .find_map(|p| match p {
                UserPart::Image { bytes, media_type } => Some((bytes, media_type)),
                UserPart::Text { .. } => None,
            })
            .ok_or_else(|| BackendError::InvalidRequest("math-ocr backend needs an image part".into()))?;
        let body = json!({
            "model": self.core.settings.model,
            "src": data_url(bytes, media_type),
            "formats": ["text"],
        });
        let (value, latency) = self.core.post(&body).await?;
        let text = value
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Transport("response has no `text` field".into()))?;
        Ok(ModelResponse {
            text: text.to_string(),
            backend_name: self.core.name.clone(),
            latency,
            cached: false,
        })
    }
}
