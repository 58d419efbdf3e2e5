//! Chat-completion and embedding gateway.
//!
//! All model traffic goes through [`Gateway`], which layers a response
//! cache, a request budget, a client-side rate limit, an in-flight bound
//! and retry with backoff over a pluggable [`Backend`]. Two backends ship
//! with the crate: an OpenAI-compatible HTTP client and a deterministic
//! mock for tests and offline runs.

mod cache;
pub mod mock;
pub mod openai;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::EmbeddingVector;

pub use cache::ResponseCache;
pub use mock::{MockConfig, MockProvider};
pub use openai::{HttpResponse, OpenAiBackend, ReqwestTransport, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Single user-turn request.
    pub fn user(model: impl Into<String>, prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![Message::user(prompt)],
            temperature,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Hex digest over every field, temperature included.
    pub fn cache_key(&self) -> String {
        hash_json("chat", self)
    }

    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub texts: Vec<String>,
}

impl EmbedRequest {
    pub fn new(model: impl Into<String>, instruction: Option<&str>, texts: Vec<String>) -> Self {
        EmbedRequest {
            model: model.into(),
            instruction: instruction.map(str::to_string),
            texts,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.texts.is_empty() {
            return Err(GatewayError::InvalidRequest("texts must be non-empty".into()));
        }
        if self.texts.iter().any(|t| t.is_empty()) {
            return Err(GatewayError::InvalidRequest("texts must be non-empty strings".into()));
        }
        Ok(())
    }

    /// Input string as sent to the provider, with the instruction prefix
    /// in the `Instruct: ...\nQuery:` convention.
    pub fn formatted_input(&self, text: &str) -> String {
        match &self.instruction {
            Some(inst) => format!("Instruct: {inst}\nQuery:{text}"),
            None => text.to_string(),
        }
    }

    fn single_key(&self, text: &str) -> String {
        hash_json("embed", &(&self.model, &self.instruction, text))
    }
}

fn hash_json<T: Serialize>(tag: &str, value: &T) -> String {
    let body = serde_json::to_string(value).expect("request serializes");
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Errors surfaced by a [`Backend`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Retryable: rate limiting, server errors, connection failures.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider refused or returned empty content: {0}")]
    Refusal(String),
    #[error("provider failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("content refusal: {0}")]
    ContentRefusal(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("request budget of {0} exhausted")]
    BudgetExceeded(u64),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    /// Budget exhaustion stops a run; everything else is per-item.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::BudgetExceeded(_) | GatewayError::Cache(_))
    }
}

/// A model provider. Implementations must be safe to call concurrently.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
    /// One vector per input text, in input order.
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_ms: vec![500, 2000, 8000],
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: usize) -> Duration {
        match self.backoff_ms.len() {
            0 => Duration::ZERO,
            n => Duration::from_millis(self.backoff_ms[retry.min(n - 1)]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Openai,
    Mock,
}

/// Model name per pipeline role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleModels {
    pub labeler: String,
    pub classifier: String,
    pub extractor: String,
    pub synthesizer: String,
    pub responder: String,
    pub embedder: String,
}

impl Default for RoleModels {
    fn default() -> Self {
        RoleModels {
            labeler: "labeler".into(),
            classifier: "classifier".into(),
            extractor: "extractor".into(),
            synthesizer: "synthesizer".into(),
            responder: "responder".into(),
            embedder: "embedder".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub api_key_env_name: String,
    pub models: RoleModels,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Hard cap on requests sent to the backend, retries included.
    pub max_requests: Option<u64>,
    /// Client-side token bucket on request count.
    pub requests_per_second: Option<f64>,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub mock: MockConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            base_url: "http://localhost:8000/v1".into(),
            api_key_env_name: "DESIGNER_API_KEY".into(),
            models: RoleModels::default(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            max_requests: None,
            requests_per_second: None,
            cache_dir: None,
            timeout_secs: 600,
            mock: MockConfig::default(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight < 1 {
            return Err(GatewayError::InvalidRequest("max_in_flight must be >= 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::InvalidRequest("retry.max_attempts must be >= 1".into()));
        }
        if matches!(self.requests_per_second, Some(r) if !(r > 0.0)) {
            return Err(GatewayError::InvalidRequest("requests_per_second must be > 0".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent backend requests.
struct InFlight {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        InFlight {
            permits: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.permits.lock().unwrap();
        while *free == 0 {
            free = self.freed.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let burst = rate.max(1.0);
        TokenBucket {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.rate;
                state.0 = (state.0 + refill).min(self.burst);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Requests that reached the backend, retries included.
    pub backend_calls: u64,
    pub cache_hits: u64,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Shareable front door to a provider.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    max_requests: Option<u64>,
    in_flight: InFlight,
    limiter: Option<TokenBucket>,
    dimension: AtomicUsize,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    sleeper: Sleeper,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: &ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::on_disk(dir.clone())?),
            None => None,
        };
        Ok(Gateway {
            backend,
            cache,
            retry: config.retry.clone(),
            max_requests: config.max_requests,
            in_flight: InFlight::new(config.max_in_flight),
            limiter: config.requests_per_second.map(TokenBucket::new),
            dimension: AtomicUsize::new(0),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            sleeper: Arc::new(std::thread::sleep),
        })
    }

    /// Builds the backend named by `config.kind`.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match config.kind {
            ProviderKind::Mock => Arc::new(MockProvider::new(config.mock.clone())),
            ProviderKind::Openai => {
                let api_key = std::env::var(&config.api_key_env_name).ok();
                let transport = ReqwestTransport::new(Duration::from_secs(config.timeout_secs))
                    .map_err(GatewayError::InvalidRequest)?;
                Arc::new(OpenAiBackend::new(transport, config.base_url.clone(), api_key))
            }
        };
        Self::new(backend, config)
    }

    /// Enables an in-memory cache when no cache directory is configured.
    pub fn with_memory_cache(mut self) -> Self {
        if self.cache.is_none() {
            self.cache = Some(ResponseCache::in_memory());
        }
        self
    }

    /// Replaces the backoff sleep; tests use a no-op.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn chat_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(bytes) = cache.get(&key)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(String::from_utf8_lossy(&bytes).into_owned());
            }
        }
        let text = self.with_retries(|| self.backend.chat(req))?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        if let Some(cache) = &self.cache {
            cache.put(&key, text.as_bytes())?;
        }
        Ok(text)
    }

    /// Embeds every text; cached texts are not re-sent.
    pub fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>, GatewayError> {
        req.validate()?;
        let keys: Vec<String> = req.texts.iter().map(|t| req.single_key(t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; req.texts.len()];
        if let Some(cache) = &self.cache {
            for (slot, key) in out.iter_mut().zip(&keys) {
                if let Some(bytes) = cache.get(key)? {
                    if let Ok(values) = serde_json::from_slice::<Vec<f64>>(&bytes) {
                        self.cache_hits.fetch_add(1, Ordering::SeqCst);
                        *slot = Some(values);
                    }
                }
            }
        }
        let missing: Vec<usize> = (0..out.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let sub = EmbedRequest {
                model: req.model.clone(),
                instruction: req.instruction.clone(),
                texts: missing.iter().map(|&i| req.texts[i].clone()).collect(),
            };
            let vectors = self.with_retries(|| self.backend.embed(&sub))?;
            if vectors.len() != missing.len() {
                return Err(GatewayError::ProviderUnavailable {
                    attempts: 1,
                    last: format!("expected {} vectors, got {}", missing.len(), vectors.len()),
                });
            }
            for (&i, values) in missing.iter().zip(vectors) {
                if let Some(cache) = &self.cache {
                    cache.put(&keys[i], serde_json::to_string(&values).unwrap().as_bytes())?;
                }
                out[i] = Some(values);
            }
        }
        let mut result = Vec::with_capacity(out.len());
        for values in out.into_iter().map(Option::unwrap) {
            self.check_dimension(values.len())?;
            let v = EmbeddingVector::new(values).map_err(|e| GatewayError::ProviderUnavailable {
                attempts: 1,
                last: e.to_string(),
            })?;
            result.push(v);
        }
        Ok(result)
    }

    fn check_dimension(&self, got: usize) -> Result<(), GatewayError> {
        match self
            .dimension
            .compare_exchange(0, got, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => Ok(()),
            Err(expected) if expected == got => Ok(()),
            Err(expected) => Err(GatewayError::DimensionMismatch { expected, got }),
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, GatewayError> {
        let mut attempts = 0u32;
        loop {
            if let Some(cap) = self.max_requests {
                let prev = self.backend_calls.fetch_add(1, Ordering::SeqCst);
                if prev >= cap {
                    self.backend_calls.fetch_sub(1, Ordering::SeqCst);
                    return Err(GatewayError::BudgetExceeded(cap));
                }
            } else {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            attempts += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(BackendError::Refusal(msg)) => return Err(GatewayError::ContentRefusal(msg)),
                Err(BackendError::Fatal(msg)) => {
                    return Err(GatewayError::ProviderUnavailable { attempts, last: msg })
                }
                Err(BackendError::Transient(msg)) => {
                    if attempts >= self.retry.max_attempts {
                        return Err(GatewayError::ProviderUnavailable { attempts, last: msg });
                    }
                    tracing::debug!(attempts, %msg, "retrying transient provider failure");
                    (self.sleeper)(self.retry.delay(attempts as usize - 1));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    struct Scripted {
        replies: Mutex<VecDeque<Result<String, BackendError>>>,
        calls: AtomicU64,
    }

    impl Backend for Scripted {
        fn chat(&self, _req: &ChatRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop_front().unwrap_or(Ok("default".into()))
        }
        fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(req.texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    fn scripted(replies: Vec<Result<String, BackendError>>) -> Arc<Scripted> {
        Arc::new(Scripted {
            replies: Mutex::new(replies.into()),
            calls: AtomicU64::new(0),
        })
    }

    fn req() -> ChatRequest {
        ChatRequest::user("m", "hi", 0.0, 16)
    }

    #[test]
    fn request_validation() {
        let mut r = req();
        r.messages.clear();
        assert!(r.validate().is_err());
        let mut r = req();
        r.temperature = -0.1;
        assert!(r.validate().is_err());
        assert!(EmbedRequest::new("e", None, vec![]).validate().is_err());
        assert!(EmbedRequest::new("e", None, vec!["".into()]).validate().is_err());
    }

    #[test]
    fn cache_key_covers_temperature() {
        let a = req();
        let mut b = req();
        b.temperature = 0.7;
        assert_ne!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key(), req().cache_key());
    }

    #[test]
    fn budget_is_enforced() {
        let backend = scripted(vec![]);
        let config = ProviderConfig {
            max_requests: Some(2),
            ..ProviderConfig::default()
        };
        let gw = Gateway::new(backend.clone(), &config).unwrap();
        gw.chat_complete(&req()).unwrap();
        gw.chat_complete(&req()).unwrap();
        assert!(matches!(gw.chat_complete(&req()), Err(GatewayError::BudgetExceeded(2))));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn refusal_and_fatal_are_not_retried() {
        let backend = scripted(vec![Err(BackendError::Refusal("blocked".into()))]);
        let gw = Gateway::new(backend.clone(), &ProviderConfig::default()).unwrap();
        assert!(matches!(gw.chat_complete(&req()), Err(GatewayError::ContentRefusal(_))));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);

        let backend = scripted(vec![Ok("   ".into())]);
        let gw = Gateway::new(backend, &ProviderConfig::default()).unwrap();
        assert!(matches!(gw.chat_complete(&req()), Err(GatewayError::EmptyCompletion)));
    }

    #[test]
    fn retries_exhaust_into_unavailable() {
        let backend = scripted(vec![
            Err(BackendError::Transient("503".into())),
            Err(BackendError::Transient("503".into())),
        ]);
        let config = ProviderConfig {
            retry: RetryPolicy { max_attempts: 2, backoff_ms: vec![1] },
            ..ProviderConfig::default()
        };
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let gw = Gateway::new(backend, &config)
            .unwrap()
            .with_sleeper(move |d| log.lock().unwrap().push(d));
        let err = gw.chat_complete(&req()).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderUnavailable { attempts: 2, .. }));
        assert_eq!(slept.lock().unwrap().as_slice(), &[Duration::from_millis(1)]);
    }

    #[test]
    fn backoff_schedule_repeats_last_entry() {
        let p = RetryPolicy { max_attempts: 5, backoff_ms: vec![10, 20] };
        assert_eq!(p.delay(0), Duration::from_millis(10));
        assert_eq!(p.delay(1), Duration::from_millis(20));
        assert_eq!(p.delay(4), Duration::from_millis(20));
    }

    #[test]
    fn embed_dimension_mismatch() {
        let backend = scripted(vec![]);
        let gw = Gateway::new(backend, &ProviderConfig::default()).unwrap();
        // Scripted embedder returns dimension 2 always; prime with a different one.
        gw.dimension.store(3, Ordering::SeqCst);
        let err = gw.embed(&EmbedRequest::new("e", None, vec!["a".into()])).unwrap_err();
        assert!(matches!(err, GatewayError::DimensionMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::default();
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        let mut c = ProviderConfig::default();
        c.retry.max_attempts = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn token_bucket_spaces_requests() {
        let bucket = TokenBucket::new(50.0);
        let start = Instant::now();
        for _ in 0..60 {
            bucket.acquire();
        }
        // 50 burst tokens, then 10 more at 50/s.
        assert!(start.elapsed() >= Duration::from_millis(150));
    }
}
