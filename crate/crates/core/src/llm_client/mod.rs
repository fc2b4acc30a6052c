//! Chat-completion access with bounded batching and a record/replay cache.
//!
//! Three backends share one interface:
//!
//! - `http` calls a chat-completions endpoint directly;
//! - `record` does the same and appends every `(request_key, response)` pair
//!   to a JSONL cache;
//! - `replay` answers from that cache and never touches the network.
//!
//! Requests are keyed by a SHA-256 over a canonical JSON rendering of the
//! fully rendered messages and the generation parameters, so any edit to a
//! prompt produces a new key.

mod cache;
mod http;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

pub use cache::{CacheEntry, ReplayCache};
pub use http::{HttpBackend, HttpConfig, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("giving up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: Box<LlmError> },
    #[error("replay cache miss for request key {key}")]
    CacheMiss { key: String },
    #[error("replay cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl LlmError {
    /// Transport failures, 5xx and 429 are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Sampling parameters. Defaults: temperature 0.7, top-p 0.95, 1024 new tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub model_name: String,
}

pub const DEFAULT_MODEL: &str = "meta-llama/Llama-3.1-70B-Instruct";

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 1024,
            model_name: DEFAULT_MODEL.to_string(),
        }
    }
}

impl GenerationParams {
    pub fn check(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// A validated request with its content key.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    messages: Vec<ChatMessage>,
    params: GenerationParams,
    request_key: String,
}

#[derive(Serialize)]
struct CanonicalParams<'a> {
    model: &'a str,
    temperature: f64,
    top_p: f64,
    max_new_tokens: u32,
}

#[derive(Serialize)]
struct Canonical<'a> {
    messages: &'a [ChatMessage],
    params: CanonicalParams<'a>,
}

/// Hex SHA-256 of `{"messages":[{"role":..,"content":..}..],"params":{"model":..,"temperature":..,"top_p":..,"max_new_tokens":..}}`
/// serialized compactly with fields in exactly that order.
pub fn request_key(messages: &[ChatMessage], params: &GenerationParams) -> String {
    let canonical = Canonical {
        messages,
        params: CanonicalParams {
            model: &params.model_name,
            temperature: params.temperature,
            top_p: params.top_p,
            max_new_tokens: params.max_new_tokens,
        },
    };
    let bytes = serde_json::to_vec(&canonical).expect("plain data always serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, params: GenerationParams) -> Result<Self, LlmError> {
        match messages.first() {
            None => return Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role == Role::Assistant => {
                return Err(LlmError::InvalidRequest(
                    "first message must be a system or user message".into(),
                ))
            }
            _ => {}
        }
        params.check()?;
        let request_key = request_key(&messages, &params);
        Ok(ChatRequest {
            messages,
            params,
            request_key,
        })
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn key(&self) -> &str {
        &self.request_key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

impl ChatResponse {
    /// The completion hit the token limit; callers decide whether to keep it.
    pub fn is_truncated(&self) -> bool {
        self.finish_reason == FinishReason::Length
    }
}

/// Anything that can answer a single chat request.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Answers strictly from a cache. Holds no network client.
pub struct ReplayBackend {
    cache: Arc<ReplayCache>,
}

impl ReplayBackend {
    pub fn new(cache: Arc<ReplayCache>) -> Self {
        ReplayBackend { cache }
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.cache
            .get(req.key())
            .map(|e| ChatResponse {
                text: e.response_text,
                finish_reason: e.finish_reason,
                usage: None,
            })
            .ok_or_else(|| LlmError::CacheMiss {
                key: req.key().to_string(),
            })
    }
}

/// Forwards to an inner backend and persists every answer.
pub struct RecordingBackend<B> {
    inner: B,
    cache: Arc<ReplayCache>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, cache: Arc<ReplayCache>) -> Self {
        RecordingBackend { inner, cache }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.send(req)?;
        self.cache.insert(CacheEntry {
            request_key: req.key().to_string(),
            response_text: response.text.clone(),
            finish_reason: response.finish_reason,
        })?;
        Ok(response)
    }
}

/// Shareable client with a fixed parallelism bound.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    parallelism: usize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, parallelism: usize) -> Self {
        LlmClient {
            backend,
            parallelism: parallelism.max(1),
        }
    }

    pub fn http(config: HttpConfig, parallelism: usize) -> Self {
        Self::new(Arc::new(HttpBackend::new(config)), parallelism)
    }

    pub fn replay(cache: Arc<ReplayCache>, parallelism: usize) -> Self {
        Self::new(Arc::new(ReplayBackend::new(cache)), parallelism)
    }

    pub fn record(config: HttpConfig, cache: Arc<ReplayCache>, parallelism: usize) -> Self {
        Self::new(
            Arc::new(RecordingBackend::new(HttpBackend::new(config), cache)),
            parallelism,
        )
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.backend.send(req)
    }

    /// Complete every request with at most `parallelism` in flight. Output
    /// slot `i` always answers `reqs[i]`; failures stay in their slot.
    pub fn complete_batch(
        &self,
        reqs: &[ChatRequest],
        parallelism: usize,
    ) -> Vec<Result<ChatResponse, LlmError>> {
        bounded_map(reqs, parallelism, |req| self.complete(req))
    }
}

/// Apply `f` to every item on at most `parallelism` worker threads,
/// returning results in input order. A parallelism of 0 is treated as 1.
pub fn bounded_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let workers = parallelism.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock")
                .expect("every slot is filled")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn req(content: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user(content)], GenerationParams::default()).unwrap()
    }

    #[test]
    fn defaults_match_generation_settings() {
        let p = GenerationParams::default();
        assert_eq!((p.temperature, p.top_p, p.max_new_tokens), (0.7, 0.95, 1024));
    }

    #[test]
    fn request_key_is_stable() {
        // Frozen from an independent Python rendering:
        // hashlib.sha256(json.dumps({"messages":[{"role":"system","content":"Be brief."},
        //   {"role":"user","content":"Summarize: café"}],"params":{"model":"m",
        //   "temperature":0.7,"top_p":0.95,"max_new_tokens":1024}},
        //   separators=(",",":"), ensure_ascii=False).encode()).hexdigest()
        let params = GenerationParams {
            model_name: "m".into(),
            ..GenerationParams::default()
        };
        let r = ChatRequest::new(
            vec![ChatMessage::system("Be brief."), ChatMessage::user("Summarize: café")],
            params,
        )
        .unwrap();
        assert_eq!(r.key(), include_str!("../../tests/fixtures/golden/request_key.txt").trim());
    }

    #[test]
    fn key_changes_with_prompt_and_params() {
        let a = req("x");
        assert_eq!(a.key(), req("x").key());
        assert_ne!(a.key(), req("y").key());
        let hot = ChatRequest::new(
            vec![ChatMessage::user("x")],
            GenerationParams {
                temperature: 1.0,
                ..GenerationParams::default()
            },
        )
        .unwrap();
        assert_ne!(a.key(), hot.key());
    }

    #[test]
    fn request_invariants() {
        assert!(ChatRequest::new(vec![], GenerationParams::default()).is_err());
        let assistant_first = vec![ChatMessage {
            role: Role::Assistant,
            content: "x".into(),
        }];
        assert!(ChatRequest::new(assistant_first, GenerationParams::default()).is_err());
        for bad in [
            GenerationParams {
                temperature: -0.1,
                ..Default::default()
            },
            GenerationParams {
                top_p: 0.0,
                ..Default::default()
            },
            GenerationParams {
                top_p: 1.5,
                ..Default::default()
            },
            GenerationParams {
                max_new_tokens: 0,
                ..Default::default()
            },
        ] {
            assert!(ChatRequest::new(vec![ChatMessage::user("x")], bad).is_err());
        }
    }

    #[test]
    fn replay_hit_and_miss() {
        let cache = Arc::new(ReplayCache::in_memory());
        let r = req("hello");
        cache
            .insert(CacheEntry {
                request_key: r.key().to_string(),
                response_text: "cached".into(),
                finish_reason: FinishReason::Stop,
            })
            .unwrap();
        let client = LlmClient::replay(cache, 1);
        assert_eq!(client.complete(&r).unwrap().text, "cached");
        let miss = req("other");
        match client.complete(&miss) {
            Err(LlmError::CacheMiss { key }) => assert_eq!(key, miss.key()),
            other => panic!("expected a cache miss, got {other:?}"),
        }
    }

    struct Echo;
    impl ChatBackend for Echo {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
            Ok(ChatResponse {
                text: format!("echo:{}", req.messages()[0].content),
                finish_reason: FinishReason::Length,
                usage: None,
            })
        }
    }

    #[test]
    fn recording_persists_pairs() {
        let cache = Arc::new(ReplayCache::in_memory());
        let client = LlmClient::new(Arc::new(RecordingBackend::new(Echo, cache.clone())), 1);
        let r = req("a");
        let live = client.complete(&r).unwrap();
        assert!(live.is_truncated());
        let replayed = LlmClient::replay(cache, 1).complete(&r).unwrap();
        assert_eq!(replayed.text, live.text);
        assert_eq!(replayed.finish_reason, FinishReason::Length);
    }

    #[test]
    fn batch_alignment_and_per_slot_errors() {
        let cache = Arc::new(ReplayCache::in_memory());
        let reqs: Vec<_> = (0..5).map(|i| req(&format!("q{i}"))).collect();
        for (i, r) in reqs.iter().enumerate() {
            if i != 3 {
                cache
                    .insert(CacheEntry {
                        request_key: r.key().to_string(),
                        response_text: format!("a{i}"),
                        finish_reason: FinishReason::Stop,
                    })
                    .unwrap();
            }
        }
        let client = LlmClient::replay(cache, 4);
        let out = client.complete_batch(&reqs, 4);
        assert_eq!(out.len(), 5);
        for (i, r) in out.iter().enumerate() {
            if i == 3 {
                assert!(matches!(r, Err(LlmError::CacheMiss { .. })));
            } else {
                assert_eq!(r.as_ref().unwrap().text, format!("a{i}"));
            }
        }
        assert!(client.complete_batch(&[], 4).is_empty());
    }

    struct Gauge {
        current: AtomicUsize,
        peak: AtomicUsize,
    }
    impl ChatBackend for Gauge {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatResponse {
                text: req.messages()[0].content.clone(),
                finish_reason: FinishReason::Stop,
                usage: None,
            })
        }
    }

    #[test]
    fn batch_respects_parallelism_bound() {
        for parallelism in [1, 3, 32] {
            let gauge = Arc::new(Gauge {
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            });
            let client = LlmClient::new(gauge.clone(), parallelism);
            let reqs: Vec<_> = (0..32).map(|i| req(&i.to_string())).collect();
            let out = client.complete_batch(&reqs, parallelism);
            assert_eq!(out.len(), 32);
            for (i, r) in out.iter().enumerate() {
                assert_eq!(r.as_ref().unwrap().text, i.to_string());
            }
            assert!(gauge.peak.load(Ordering::SeqCst) <= parallelism);
        }
    }
}
