//! Request/response contract for model endpoints, plus clocks and retries.
//!
//! Every model the toolkit talks to (diagnostic model, answer extractor,
//! rationale generator, translator, refiner) is reached through
//! [`ModelClient`]: role-tagged chat messages, optionally with one image,
//! in; text out.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    Uri(String),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into(), image: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into(), image: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into(), image: None }
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.image = Some(image);
        self
    }
}

/// Decoding parameters sent with every request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_input_tokens: u32,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub min_pixels: u64,
    pub max_pixels: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_input_tokens: 16_384,
            max_output_tokens: 512,
            temperature: 0.1,
            min_pixels: 4 * 28 * 28,
            max_pixels: 8192 * 28 * 28,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_input_tokens == 0 || self.max_output_tokens == 0 {
            return Err("token limits must be positive".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature {} must be finite and non-negative", self.temperature));
        }
        if self.min_pixels == 0 || self.min_pixels > self.max_pixels {
            return Err(format!("pixel bounds {}..{} are not a positive range", self.min_pixels, self.max_pixels));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Caller-chosen key; scripted clients look responses up by it.
    pub request_id: String,
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("no scripted response for request {0:?}")]
    Unscripted(String),
}

impl ClientError {
    /// Whether another attempt could succeed: transport failures, rate
    /// limits and server errors. Client errors and script misses are final.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            ClientError::Malformed(_) | ClientError::Unscripted(_) => false,
        }
    }
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

impl<T: ModelClient + ?Sized> ModelClient for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

impl<T: ModelClient + ?Sized> ModelClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

/// Adapts a closure into a client; handy for fault injection.
pub struct FnClient<F>(pub F);

impl<F> ModelClient for FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, ClientError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (self.0)(request)
    }
}

/// Monotonic time source. Injectable so latency and timing rules can be tested exactly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when told to; `sleep` advances it instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay_ms: 200, factor: 2 }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        RetryPolicy { attempts, base_delay_ms: 0, factor: 1 }
    }

    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(u64::from(self.factor).saturating_pow(attempt)))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("request {request_id:?} failed after {attempts} attempt(s): {last}")]
pub struct RetryError {
    pub request_id: String,
    pub attempts: u32,
    pub last: ClientError,
}

/// Call `client`, retrying with exponential backoff. Backoff time is spent on `clock`.
pub fn complete_with_retry(
    client: &dyn ModelClient,
    request: &ChatRequest,
    policy: &RetryPolicy,
    clock: &dyn Clock,
) -> Result<String, RetryError> {
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            clock.sleep(policy.delay(attempt - 1));
        }
        match client.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if !e.is_retryable() => {
                return Err(RetryError { request_id: request.request_id.clone(), attempts: attempt + 1, last: e })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(RetryError { request_id: request.request_id.clone(), attempts, last: last.expect("at least one attempt") })
}

/// Script file for [`ScriptedClient`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Script {
    /// request_id -> canned response text.
    pub responses: BTreeMap<String, String>,
    /// Simulated generation latency per call.
    #[serde(default)]
    pub latency_ms: u64,
    /// Response for request ids not in the map; `None` makes them errors.
    #[serde(default)]
    pub fallback: Option<String>,
}

impl Script {
    pub fn load(path: &Path) -> std::io::Result<Script> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Deterministic local endpoint replaying canned responses keyed by request id.
pub struct ScriptedClient {
    script: Script,
    clock: Arc<dyn Clock>,
}

impl ScriptedClient {
    pub fn new(script: Script) -> Self {
        Self::with_clock(script, Arc::new(SystemClock::new()))
    }

    /// Latency is spent on `clock` (instantly, for a [`ManualClock`]).
    pub fn with_clock(script: Script, clock: Arc<dyn Clock>) -> Self {
        ScriptedClient { script, clock }
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self::new(Script {
            responses: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            ..Script::default()
        })
    }
}

impl ModelClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        if self.script.latency_ms > 0 {
            self.clock.sleep(Duration::from_millis(self.script.latency_ms));
        }
        self.script
            .responses
            .get(&request.request_id)
            .or(self.script.fallback.as_ref())
            .cloned()
            .ok_or_else(|| ClientError::Unscripted(request.request_id.clone()))
    }
}

/// Remote endpoint speaking the common chat-completions JSON contract.
///
/// The bearer token is read from the environment variable named by
/// `api_key_env` at call time; images are sent inline as data URIs.
#[derive(Clone, Debug)]
pub struct HttpChatClient {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpChatClient { base_url: base_url.into(), model: model.into(), api_key_env: None }
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = Some(var.into());
        self
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = serde_json::to_value(m.role).unwrap();
                match &m.image {
                    None => serde_json::json!({ "role": role, "content": m.content }),
                    Some(img) => {
                        let url = match img {
                            ImageRef::Uri(u) => u.clone(),
                            ImageRef::Bytes(b) => {
                                format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(b))
                            }
                        };
                        serde_json::json!({
                            "role": role,
                            "content": [
                                { "type": "image_url", "image_url": { "url": url } },
                                { "type": "text", "text": m.content },
                            ]
                        })
                    }
                }
            })
            .collect();
        serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        })
    }
}

impl ModelClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut req = ureq::post(&url).config().http_status_as_error(false).build();
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| ClientError::Transport(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.body(request)).map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { status, body });
        }
        let value: serde_json::Value =
            resp.body_mut().read_json().map_err(|e| ClientError::Malformed(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn req(id: &str) -> ChatRequest {
        ChatRequest {
            request_id: id.into(),
            messages: vec![ChatMessage::user("q")],
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn default_params_validate() {
        let p = GenerationParams::default();
        assert_eq!((p.max_input_tokens, p.max_output_tokens), (16_384, 512));
        assert!(p.validate().is_ok());
        assert!(GenerationParams { temperature: -1.0, ..p.clone() }.validate().is_err());
        assert!(GenerationParams { min_pixels: 10, max_pixels: 5, ..p }.validate().is_err());
    }

    #[test]
    fn retry_gives_up_after_three_attempts_with_backoff() {
        let calls = AtomicU32::new(0);
        let client = FnClient(|_: &ChatRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ClientError::Transport("down".into()))
        });
        let clock = ManualClock::new();
        let err = complete_with_retry(&client, &req("r"), &RetryPolicy::default(), &clock).unwrap_err();
        assert_eq!(err.attempts, 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        // 200 ms then 400 ms of backoff.
        assert_eq!(clock.now(), Duration::from_millis(600));
    }

    #[test]
    fn final_errors_are_not_retried() {
        let calls = AtomicU32::new(0);
        let client = FnClient(|_: &ChatRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ClientError::Status { status: 400, body: "bad request".into() })
        });
        let clock = ManualClock::new();
        let err = complete_with_retry(&client, &req("r"), &RetryPolicy::default(), &clock).unwrap_err();
        assert_eq!((err.attempts, calls.load(Ordering::SeqCst)), (1, 1));
        assert_eq!(clock.now(), Duration::ZERO);
        assert!(ClientError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(ClientError::Status { status: 429, body: String::new() }.is_retryable());
    }

    #[test]
    fn retry_recovers() {
        let calls = AtomicU32::new(0);
        let client = FnClient(|_: &ChatRequest| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(ClientError::Transport("blip".into()))
            } else {
                Ok("ok".into())
            }
        });
        let out = complete_with_retry(&client, &req("r"), &RetryPolicy::no_delay(3), &ManualClock::new());
        assert_eq!(out.unwrap(), "ok");
    }

    #[test]
    fn scripted_client_spends_latency_on_clock() {
        let clock = Arc::new(ManualClock::new());
        let script =
            Script { responses: [("a".to_string(), "yes".to_string())].into(), latency_ms: 100, fallback: None };
        let c = ScriptedClient::with_clock(script, clock.clone());
        assert_eq!(c.complete(&req("a")).unwrap(), "yes");
        assert_eq!(clock.now(), Duration::from_millis(100));
        assert!(matches!(c.complete(&req("b")), Err(ClientError::Unscripted(_))));
    }

    #[test]
    fn http_body_inlines_images() {
        let c = HttpChatClient::new("http://localhost:1", "m");
        let mut r = req("x");
        r.messages[0] = ChatMessage::user("look").with_image(ImageRef::Bytes(vec![1, 2, 3]));
        let body = c.body(&r);
        let url = body["messages"][0]["content"][0]["image_url"]["url"].as_str().unwrap();
        assert_eq!(url, "data:image/png;base64,AQID");
        assert_eq!(body["max_tokens"], 512);
    }
}
