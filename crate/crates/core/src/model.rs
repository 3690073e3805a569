//! Language/vision model backends.
//!
//! [`ModelClient`] is the seam every component talks through. Three backends
//! ship: a hosted chat-completions client with retry and an in-flight limiter,
//! a scripted [`CannedBackend`] for tests, and [`NullBackend`] which always fails.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::episode::ImagePayload;

pub const ENV_ENDPOINT: &str = "MODEL_ENDPOINT";
pub const ENV_MODEL: &str = "MODEL_NAME";
pub const ENV_API_KEY: &str = "MODEL_API_KEY";

/// Images above this size are refused before anything is sent.
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 20 * 1024 * 1024;

#[derive(Clone, PartialEq)]
pub struct ModelRequest {
    pub system_text: String,
    pub user_text: String,
    pub image: Option<ImagePayload>,
    pub max_reply_tokens: u32,
    pub temperature: f64,
}

impl fmt::Debug for ModelRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRequest")
            .field("system_text", &self.system_text)
            .field("user_text", &self.user_text)
            .field("image_bytes", &self.image.as_ref().map(|i| i.bytes.len()))
            .field("max_reply_tokens", &self.max_reply_tokens)
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl ModelRequest {
    pub fn new(
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let user_text = user_text.into();
        if user_text.trim().is_empty() {
            return Err(ModelError::InvalidRequest("user text is empty".into()));
        }
        Ok(Self {
            system_text: system_text.into(),
            user_text,
            image: None,
            max_reply_tokens: 1024,
            temperature: 0.0,
        })
    }

    pub fn with_image(mut self, image: Option<ImagePayload>) -> Self {
        self.image = image;
        self
    }

    pub fn with_max_reply_tokens(mut self, tokens: u32) -> Self {
        self.max_reply_tokens = tokens.max(1);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelReply {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Exponential (x2) with full jitter.
    pub base_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            request_timeout: Duration::from_millis(60_000),
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered sleep after failed attempt `attempt` (1-based).
    pub fn backoff_ceiling(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_backoff.saturating_mul(factor)
    }

    /// The largest sleep this policy can ever take.
    pub fn max_backoff(&self) -> Duration {
        self.backoff_ceiling(self.max_attempts.max(1))
    }

    /// Worst-case wall time against a backend that always fails.
    pub fn latency_bound(&self) -> Duration {
        (self.request_timeout + self.max_backoff()) * self.max_attempts.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing configuration: environment variable {0} is not set")]
    MissingConfig(&'static str),
    #[error("invalid credential")]
    InvalidCredential,
    #[error("image payload of {size} bytes exceeds the {limit}-byte limit")]
    OversizedImage { size: usize, limit: usize },
    #[error("authentication rejected (status {status})")]
    Auth { status: u16 },
    #[error("request rejected (status {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {last_error}")]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
        last_error: String,
    },
    #[error("unexpected response body: {0}")]
    Protocol(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// A chat-style model backend, shareable across threads.
pub trait ModelClient: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Whether image attachments are forwarded to the model.
    fn supports_vision(&self) -> bool {
        false
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelReply, ModelError>;
}

/// Replies from a fixed script, repeating the final entry once exhausted.
/// Every received request is kept for inspection.
#[derive(Debug)]
pub struct CannedBackend {
    script: Vec<String>,
    vision: bool,
    state: Mutex<CannedState>,
}

#[derive(Debug, Default)]
struct CannedState {
    cursor: usize,
    requests: Vec<ModelRequest>,
}

impl CannedBackend {
    /// Panics if `script` is empty.
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let script: Vec<String> = script.into_iter().map(Into::into).collect();
        assert!(!script.is_empty(), "canned backend needs at least one reply");
        Self {
            script,
            vision: false,
            state: Mutex::new(CannedState::default()),
        }
    }

    pub fn with_vision(mut self, vision: bool) -> Self {
        self.vision = vision;
        self
    }

    pub fn requests(&self) -> Vec<ModelRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }
}

/// Convenience constructor matching the other backends' naming.
pub fn canned_backend<I, S>(script: I) -> CannedBackend
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    CannedBackend::new(script)
}

impl ModelClient for CannedBackend {
    fn backend_id(&self) -> &str {
        "canned"
    }

    fn supports_vision(&self) -> bool {
        self.vision
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelReply, ModelError> {
        let mut state = self.state.lock().unwrap();
        let text = self.script[state.cursor.min(self.script.len() - 1)].clone();
        state.cursor += 1;
        state.requests.push(request.clone());
        Ok(ModelReply {
            text,
            latency_ms: 0,
            backend_id: "canned".into(),
        })
    }
}

/// Always fails. Stands in when no backend is configured.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullBackend;

impl ModelClient for NullBackend {
    fn backend_id(&self) -> &str {
        "null"
    }

    fn complete(&self, _request: &ModelRequest) -> Result<ModelReply, ModelError> {
        Err(ModelError::Unavailable("no model backend configured".into()))
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(capacity: usize) -> Self {
        Self {
            available: Mutex::new(capacity.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Encodes an image as a `data:` URI with a base64 body.
pub fn encode_data_uri(image: &ImagePayload) -> String {
    format!("data:{};base64,{}", image.media_type, BASE64.encode(&image.bytes))
}

pub fn decode_data_uri(uri: &str) -> Option<ImagePayload> {
    let rest = uri.strip_prefix("data:")?;
    let (media_type, body) = rest.split_once(";base64,")?;
    Some(ImagePayload {
        media_type: media_type.to_string(),
        bytes: BASE64.decode(body).ok()?,
    })
}

#[derive(Clone)]
struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Settings for [`ChatCompletionsClient`].
#[derive(Debug, Clone)]
pub struct HostedConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    api_key: ApiKey,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub max_image_bytes: usize,
}

impl HostedConfig {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: ApiKey(api_key.into()),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }

    /// Reads `MODEL_ENDPOINT`, `MODEL_NAME` and `MODEL_API_KEY`.
    pub fn from_env() -> Result<Self, ModelError> {
        let var = |name: &'static str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or(ModelError::MissingConfig(name))
        };
        Ok(Self::new(var(ENV_ENDPOINT)?, var(ENV_MODEL)?, var(ENV_API_KEY)?))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

/// Client for the widely implemented `POST /chat/completions` wire shape.
#[derive(Debug)]
pub struct ChatCompletionsClient {
    config: HostedConfig,
    agent: ureq::Agent,
    limiter: Limiter,
    backend_id: String,
}

enum AttemptError {
    Retryable { status: Option<u16>, message: String },
    Fatal(ModelError),
}

impl ChatCompletionsClient {
    pub fn new(config: HostedConfig) -> Result<Self, ModelError> {
        let key = config.api_key.0.trim();
        if key.is_empty() || key.chars().any(|c| c.is_control() || c.is_whitespace()) {
            return Err(ModelError::InvalidCredential);
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(config.retry.request_timeout)
            .build();
        Ok(Self {
            limiter: Limiter::new(config.max_in_flight),
            backend_id: format!("chat-completions:{}", config.model),
            config,
            agent,
        })
    }

    pub fn from_env() -> Result<Self, ModelError> {
        Self::new(HostedConfig::from_env()?)
    }

    pub fn config(&self) -> &HostedConfig {
        &self.config
    }

    /// Request body in the chat-completions schema.
    pub fn request_body(&self, request: &ModelRequest) -> Value {
        let mut user_parts = vec![json!({"type": "text", "text": request.user_text})];
        if let Some(image) = &request.image {
            user_parts.push(json!({
                "type": "image_url",
                "image_url": {"url": encode_data_uri(image)}
            }));
        }
        let mut messages = Vec::with_capacity(2);
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": user_parts}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.max_reply_tokens,
            "temperature": request.temperature,
        })
    }

    /// Sends `request`, retrying timeouts, connection failures, throttling and
    /// server errors under `policy`. Authentication and other client errors fail at once.
    pub fn complete_with(
        &self,
        request: &ModelRequest,
        policy: &RetryPolicy,
    ) -> Result<ModelReply, ModelError> {
        if let Some(image) = &request.image {
            if image.bytes.len() > self.config.max_image_bytes {
                return Err(ModelError::OversizedImage {
                    size: image.bytes.len(),
                    limit: self.config.max_image_bytes,
                });
            }
        }
        let body = self.request_body(request);
        let attempts = policy.max_attempts.max(1);
        let mut last_status = None;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let started = Instant::now();
            let outcome = {
                let _permit = self.limiter.acquire();
                self.attempt(&body, policy.request_timeout)
            };
            match outcome {
                Ok(text) => {
                    return Ok(ModelReply {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: self.backend_id.clone(),
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable { status, message }) => {
                    last_status = status;
                    last_error = message;
                }
            }
            if attempt < attempts {
                let ceiling = policy.backoff_ceiling(attempt).as_millis() as u64;
                let sleep = rand::thread_rng().gen_range(0..=ceiling);
                std::thread::sleep(Duration::from_millis(sleep));
            }
        }
        Err(ModelError::Exhausted {
            attempts,
            last_status,
            last_error,
        })
    }

    fn attempt(&self, body: &Value, timeout: Duration) -> Result<String, AttemptError> {
        let response = self
            .agent
            .post(&self.config.endpoint)
            .timeout(timeout)
            .set("Authorization", &format!("Bearer {}", self.config.api_key.0))
            .set("Content-Type", "application/json")
            .send_json(body.clone());
        match response {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| AttemptError::Fatal(ModelError::Protocol(e.to_string())))?;
                extract_reply_text(&value).map_err(AttemptError::Fatal)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let body: String = body.chars().take(512).collect();
                match status {
                    401 | 403 => Err(AttemptError::Fatal(ModelError::Auth { status })),
                    408 | 409 | 425 | 429 | 500..=599 => Err(AttemptError::Retryable {
                        status: Some(status),
                        message: body,
                    }),
                    _ => Err(AttemptError::Fatal(ModelError::Rejected { status, body })),
                }
            }
            Err(ureq::Error::Transport(t)) => Err(AttemptError::Retryable {
                status: None,
                message: t.to_string(),
            }),
        }
    }
}

fn extract_reply_text(value: &Value) -> Result<String, ModelError> {
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ModelError::Protocol("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some hosts return content as a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(ModelError::Protocol(format!("unexpected content {other}"))),
    }
}

impl ModelClient for ChatCompletionsClient {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn supports_vision(&self) -> bool {
        true
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelReply, ModelError> {
        self.complete_with(request, &self.config.retry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(text: &str) -> ModelRequest {
        ModelRequest::new("sys", text).unwrap()
    }

    #[test]
    fn canned_replies_in_order_then_repeat() {
        let backend = CannedBackend::new(["A", "B"]);
        let texts: Vec<_> = (0..3)
            .map(|i| backend.complete(&req(&format!("q{i}"))).unwrap().text)
            .collect();
        assert_eq!(texts, ["A", "B", "B"]);
        assert_eq!(backend.call_count(), 3);
        assert_eq!(backend.requests()[2].user_text, "q2");
    }

    #[test]
    fn canned_fixture_backend_id() {
        let backend = canned_backend(["FORWARD"]);
        let reply = backend.complete(&req("anything")).unwrap();
        assert_eq!(reply.text, "FORWARD");
        assert_eq!(reply.backend_id, "canned");
    }

    #[test]
    fn canned_is_deterministic() {
        let run = || {
            let b = CannedBackend::new(["x", "y", "z"]);
            (0..5).map(|_| b.complete(&req("q")).unwrap().text).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_user_text_rejected() {
        assert!(matches!(
            ModelRequest::new("s", "  "),
            Err(ModelError::InvalidRequest(_))
        ));
    }

    #[test]
    fn null_backend_fails() {
        assert!(matches!(
            NullBackend.complete(&req("q")),
            Err(ModelError::Unavailable(_))
        ));
    }

    #[test]
    fn credential_is_redacted_and_validated() {
        let cfg = HostedConfig::new("http://127.0.0.1:1/v1/chat/completions", "m", "sk-secret-123");
        assert!(!format!("{cfg:?}").contains("sk-secret-123"));
        let client = ChatCompletionsClient::new(cfg).unwrap();
        assert!(!format!("{client:?}").contains("sk-secret-123"));
        assert_eq!(
            ChatCompletionsClient::new(HostedConfig::new("http://x", "m", "  ")).unwrap_err(),
            ModelError::InvalidCredential
        );
    }

    #[test]
    fn oversized_image_refused_without_sending() {
        let mut cfg = HostedConfig::new("http://127.0.0.1:1/", "m", "k");
        cfg.max_image_bytes = 8;
        let client = ChatCompletionsClient::new(cfg).unwrap();
        let request = req("look").with_image(Some(ImagePayload {
            media_type: "image/png".into(),
            bytes: vec![0; 9],
        }));
        assert_eq!(
            client.complete(&request).unwrap_err(),
            ModelError::OversizedImage { size: 9, limit: 8 }
        );
    }

    #[test]
    fn body_carries_image_part() {
        let client = ChatCompletionsClient::new(HostedConfig::new("http://x", "gpt", "k")).unwrap();
        let image = ImagePayload {
            media_type: "image/jpeg".into(),
            bytes: vec![1, 2, 3],
        };
        let body = client.request_body(&req("hi").with_image(Some(image.clone())));
        assert_eq!(body["model"], "gpt");
        assert_eq!(body["temperature"], 0.0);
        let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert_eq!(decode_data_uri(url).unwrap(), image);
    }

    #[test]
    fn backoff_ceiling_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff_ceiling(1), Duration::from_millis(500));
        assert_eq!(p.backoff_ceiling(2), Duration::from_millis(1000));
        assert_eq!(p.max_backoff(), Duration::from_millis(2000));
        assert_eq!(p.latency_bound(), Duration::from_millis(3 * 62_000));
    }

    proptest! {
        #[test]
        fn data_uri_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let image = ImagePayload { media_type: "image/png".into(), bytes };
            prop_assert_eq!(decode_data_uri(&encode_data_uri(&image)).unwrap(), image);
        }
    }
}
