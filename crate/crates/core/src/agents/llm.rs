//! Chat-completion backend with retries, a shared in-flight limit, and an
//! injectable transport (HTTP or recorded fixtures).

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentError, AgentFactory, AgentResponse, BackendIdentity, DecisionAgent, DecisionRequest, TokenUsage};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::max_inflight")]
    pub max_inflight: usize,
    /// Name of the environment variable holding the API key.
    #[serde(default = "defaults::api_key_env")]
    pub api_key_env: String,
    #[serde(default = "defaults::initial_backoff_ms")]
    pub initial_backoff_ms: u64,
}

mod defaults {
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn timeout_secs() -> f64 {
        120.0
    }
    pub fn max_retries() -> u32 {
        5
    }
    pub fn max_inflight() -> usize {
        8
    }
    pub fn api_key_env() -> String {
        "OPENAI_API_KEY".into()
    }
    pub fn initial_backoff_ms() -> u64 {
        1000
    }
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: defaults::temperature(),
            timeout_secs: defaults::timeout_secs(),
            max_retries: defaults::max_retries(),
            max_inflight: defaults::max_inflight(),
            api_key_env: defaults::api_key_env(),
            initial_backoff_ms: defaults::initial_backoff_ms(),
        }
    }

    pub fn for_fixture(model: &str) -> Self {
        Self {
            max_retries: 0,
            ..Self::new("fixture://", model)
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if self.model.trim().is_empty() {
            return bad("endpoint.model must not be empty".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("endpoint.temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("endpoint.timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if self.max_inflight == 0 {
            return bad("endpoint.max_inflight must be at least 1".into());
        }
        if self.api_key_env.trim().is_empty() {
            return bad("endpoint.api_key_env must name an environment variable".into());
        }
        Ok(())
    }

    pub fn validate_http(&self) -> Result<(), AgentError> {
        self.validate()?;
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(AgentError::Config(format!(
                "endpoint.base_url must start with http:// or https://, got `{}`",
                self.base_url
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// Per-decision seed; used by fixtures to pick among recorded responses.
    pub seed: u64,
}

impl ChatRequest {
    pub fn from_decision(request: &DecisionRequest, model: &str, temperature: f64, seed: u64) -> Self {
        Self {
            model: model.to_string(),
            messages: request
                .messages()
                .into_iter()
                .map(|m| ChatMessage {
                    role: m.role.wire_name().to_string(),
                    content: m.text,
                })
                .collect(),
            temperature,
            seed,
        }
    }

    /// SHA-256 of the canonical JSON of (model, messages, temperature).
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "messages": self.messages,
            "model": self.model,
            "temperature": self.temperature,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    fn wire_body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("server error (HTTP {0})")]
    Server(u16),
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("{0}")]
    Fatal(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Fatal(_))
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<ChatReply, TransportError>;
}

/// Counting semaphore bounding concurrent requests across all workers.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct InflightGuard<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InflightGuard<'_> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.0 >= self.max {
            s = self.freed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.0 += 1;
        s.1 = s.1.max(s.0);
        InflightGuard { limiter: self }
    }

    /// Highest number of simultaneous holders observed.
    pub fn peak(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).1
    }
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().unwrap_or_else(|e| e.into_inner());
        s.0 -= 1;
        self.limiter.freed.notify_one();
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpTransport {
    url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent: config.into(),
        }
    }
}

fn parse_completion(body: &str) -> Result<(String, Option<TokenUsage>), TransportError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| TransportError::Fatal(format!("response is not JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))?
        .to_string();
    let usage = v.get("usage").and_then(|u| serde_json::from_value::<TokenUsage>(u.clone()).ok());
    Ok((text, usage))
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest, _timeout: Duration) -> Result<ChatReply, TransportError> {
        let start = Instant::now();
        let result = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request.wire_body());
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(TransportError::Timeout),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::HostNotFound | ureq::Error::ConnectionFailed)) => {
                return Err(TransportError::Network(e.to_string()))
            }
            Err(e) => return Err(TransportError::Fatal(e.to_string())),
        };
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(TransportError::RateLimited),
            500..=599 => return Err(TransportError::Server(status)),
            _ => {
                let snippet: String = body.chars().take(200).collect();
                return Err(TransportError::Fatal(format!("HTTP {status}: {snippet}")));
            }
        }
        let (text, usage) = parse_completion(&body)?;
        Ok(ChatReply {
            text,
            usage,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    /// Request digest, or `*` for the fallback used when nothing matches.
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Alternatives chosen by the decision seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<String>>,
}

/// Replays recorded responses keyed by request digest.
#[derive(Debug, Clone, Default)]
pub struct FixtureTransport {
    entries: HashMap<String, Vec<String>>,
    fallback: Option<Vec<String>>,
}

impl FixtureTransport {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut fixture = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let responses = match (entry.response, entry.responses) {
                (Some(r), None) => vec![r],
                (None, Some(rs)) if !rs.is_empty() => rs,
                _ => return Err(format!("line {}: give exactly one of `response` or a nonempty `responses`", i + 1)),
            };
            if entry.digest == "*" {
                fixture.fallback = Some(responses);
            } else {
                fixture.entries.insert(entry.digest, responses);
            }
        }
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("reading fixture {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| AgentError::Config(format!("fixture {}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.entries.len() + usize::from(self.fallback.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ChatTransport for FixtureTransport {
    fn complete(&self, request: &ChatRequest, _timeout: Duration) -> Result<ChatReply, TransportError> {
        let digest = request.digest();
        let options = self
            .entries
            .get(&digest)
            .or(self.fallback.as_ref())
            .ok_or_else(|| TransportError::Fatal(format!("no fixture response for request digest {digest}")))?;
        Ok(ChatReply {
            text: options[(request.seed % options.len() as u64) as usize].clone(),
            usage: None,
            latency_ms: 0,
        })
    }
}

struct Shared {
    endpoint: LlmEndpointConfig,
    transport: Arc<dyn ChatTransport>,
    limiter: InflightLimiter,
    backend_name: String,
}

/// Agent factory for chat-completion models. Cloning shares the limiter.
#[derive(Clone)]
pub struct LlmBackend {
    shared: Arc<Shared>,
}

impl LlmBackend {
    /// HTTP backend; the API key is read from `endpoint.api_key_env`.
    pub fn from_env(endpoint: LlmEndpointConfig) -> Result<Self, AgentError> {
        endpoint.validate_http()?;
        let key = std::env::var(&endpoint.api_key_env).map_err(|_| {
            AgentError::Config(format!(
                "environment variable {} (endpoint.api_key_env) is not set",
                endpoint.api_key_env
            ))
        })?;
        let transport = HttpTransport::new(&endpoint.base_url, key, Duration::from_secs_f64(endpoint.timeout_secs));
        Ok(Self::with_transport(endpoint, Arc::new(transport), "llm"))
    }

    pub fn with_transport(endpoint: LlmEndpointConfig, transport: Arc<dyn ChatTransport>, backend_name: &str) -> Self {
        let limiter = InflightLimiter::new(endpoint.max_inflight);
        Self {
            shared: Arc::new(Shared {
                endpoint,
                transport,
                limiter,
                backend_name: backend_name.to_string(),
            }),
        }
    }

    pub fn limiter(&self) -> &InflightLimiter {
        &self.shared.limiter
    }

    /// One chat completion with retries on transient failures.
    pub fn complete(&self, request: &ChatRequest) -> Result<AgentResponse, AgentError> {
        let ep = &self.shared.endpoint;
        let timeout = Duration::from_secs_f64(ep.timeout_secs);
        let mut backoff = Duration::from_millis(ep.initial_backoff_ms);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let result = {
                let _slot = self.shared.limiter.acquire();
                self.shared.transport.complete(request, timeout)
            };
            match result {
                Ok(reply) => {
                    return Ok(AgentResponse {
                        text: reply.text,
                        latency_ms: reply.latency_ms,
                        usage: reply.usage,
                        retries: attempts - 1,
                    })
                }
                Err(e) if e.is_retryable() && attempts <= ep.max_retries => {
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(MAX_BACKOFF);
                }
                Err(e) => {
                    return Err(AgentError::Transport {
                        attempts,
                        message: e.to_string(),
                    })
                }
            }
        }
    }
}

impl AgentFactory for LlmBackend {
    fn spawn(&self, seed: u64) -> Box<dyn DecisionAgent> {
        Box::new(LlmAgent {
            backend: self.clone(),
            seed,
        })
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            backend: self.shared.backend_name.clone(),
            model: Some(self.shared.endpoint.model.clone()),
        }
    }
}

pub struct LlmAgent {
    backend: LlmBackend,
    seed: u64,
}

impl DecisionAgent for LlmAgent {
    fn respond(&mut self, request: &DecisionRequest) -> Result<AgentResponse, AgentError> {
        let ep = &self.backend.shared.endpoint;
        let chat = ChatRequest::from_decision(request, &ep.model, ep.temperature, self.seed);
        self.backend.complete(&chat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    struct Scripted {
        failures: Vec<TransportError>,
        calls: AtomicU32,
    }

    impl ChatTransport for Scripted {
        fn complete(&self, _: &ChatRequest, _: Duration) -> Result<ChatReply, TransportError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            match self.failures.get(i) {
                Some(e) => Err(e.clone()),
                None => Ok(ChatReply {
                    text: "<answer>ORDER</answer>".into(),
                    usage: None,
                    latency_ms: 3,
                }),
            }
        }
    }

    fn fast_endpoint(max_retries: u32) -> LlmEndpointConfig {
        LlmEndpointConfig {
            max_retries,
            initial_backoff_ms: 1,
            ..LlmEndpointConfig::new("http://localhost", "m")
        }
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: "hi".into(),
            }],
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let t = Arc::new(Scripted {
            failures: vec![TransportError::RateLimited, TransportError::RateLimited],
            calls: AtomicU32::new(0),
        });
        let b = LlmBackend::with_transport(fast_endpoint(3), t.clone(), "llm");
        let r = b.complete(&request()).unwrap();
        assert_eq!(r.retries, 2);
        assert!(!r.text.is_empty());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_timeouts_exhaust_retries() {
        let t = Arc::new(Scripted {
            failures: vec![TransportError::Timeout; 10],
            calls: AtomicU32::new(0),
        });
        let b = LlmBackend::with_transport(fast_endpoint(3), t, "llm");
        assert_eq!(
            b.complete(&request()),
            Err(AgentError::Transport {
                attempts: 4,
                message: "request timed out".into()
            })
        );
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let t = Arc::new(Scripted {
            failures: vec![TransportError::Fatal("HTTP 400".into())],
            calls: AtomicU32::new(0),
        });
        let b = LlmBackend::with_transport(fast_endpoint(3), t.clone(), "llm");
        assert!(b.complete(&request()).is_err());
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatTransport for Slow {
        fn complete(&self, _: &ChatRequest, _: Duration) -> Result<ChatReply, TransportError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatReply {
                text: "x".into(),
                usage: None,
                latency_ms: 0,
            })
        }
    }

    #[test]
    fn inflight_limit_holds_across_threads() {
        let t = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let ep = LlmEndpointConfig {
            max_inflight: 3,
            ..fast_endpoint(0)
        };
        let b = LlmBackend::with_transport(ep, t.clone(), "llm");
        std::thread::scope(|s| {
            for _ in 0..12 {
                let b = b.clone();
                s.spawn(move || {
                    for _ in 0..5 {
                        b.complete(&request()).unwrap();
                    }
                });
            }
        });
        assert!(t.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(b.limiter().peak(), t.peak.load(Ordering::SeqCst));
    }

    #[test]
    fn missing_key_names_the_variable() {
        let ep = LlmEndpointConfig {
            api_key_env: "CTXSIM_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..LlmEndpointConfig::new("https://example.invalid/v1", "m")
        };
        let err = LlmBackend::from_env(ep).err().unwrap().to_string();
        assert!(err.contains("CTXSIM_TEST_KEY_THAT_IS_NOT_SET"), "{err}");
    }

    #[test]
    fn fixture_lookup_and_fallback() {
        let req = request();
        let text = format!(
            "{{\"digest\":\"{}\",\"responses\":[\"a\",\"b\"]}}\n{{\"digest\":\"*\",\"response\":\"default\"}}\n",
            req.digest()
        );
        let f = FixtureTransport::parse(&text).unwrap();
        assert_eq!(f.complete(&req, Duration::ZERO).unwrap().text, "a");
        let odd = ChatRequest { seed: 1, ..req.clone() };
        assert_eq!(f.complete(&odd, Duration::ZERO).unwrap().text, "b");
        let other = ChatRequest { temperature: 0.0, ..req };
        assert_eq!(f.complete(&other, Duration::ZERO).unwrap().text, "default");
        assert!(FixtureTransport::parse("{\"digest\":\"x\"}").unwrap_err().contains("line 1"));
        assert!(FixtureTransport::parse("\n{oops").unwrap_err().starts_with("line 2"));
    }

    #[test]
    fn completion_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"<answer>ORDER</answer>"}}],
                       "usage":{"prompt_tokens":10,"completion_tokens":5,"total_tokens":15}}"#;
        let (text, usage) = parse_completion(body).unwrap();
        assert_eq!(text, "<answer>ORDER</answer>");
        assert_eq!(usage.unwrap().total_tokens, 15);
        assert!(parse_completion("{}").is_err());
    }

    #[test]
    fn digest_ignores_seed() {
        let a = request();
        let b = ChatRequest { seed: 99, ..a.clone() };
        assert_eq!(a.digest(), b.digest());
    }
}
