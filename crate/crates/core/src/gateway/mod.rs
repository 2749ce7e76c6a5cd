//! Uniform access to chat-completion backends with content-addressed
//! caching, record/replay, retries, and language detection.
//!
//! A [`Gateway`] pairs an optional live backend with an optional
//! file cache. With both, responses are recorded before being returned;
//! with only a cache, the gateway replays deterministically and a
//! request that was never recorded is a [`GatewayError::ReplayMiss`].

mod backends;
mod cache;
mod embedding;

pub use backends::{ChatBackend, HttpChatBackend, ScriptedChatBackend, ScriptRule};
pub use cache::{CacheEntry, ChatCache};
pub use embedding::{
    cosine, EmbeddingBackend, EmbeddingVector, HashEmbedding, HttpEmbedding, EMBEDDING_DIM,
};

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::GatewayError;
use crate::stance::Language;

/// Sampling temperature is pinned for reproducibility.
pub const TEMPERATURE: f64 = 0.0;
/// Default completion budget; overridable through configuration.
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
/// Han-character ratio above which text counts as Chinese.
pub const DEFAULT_LANG_THRESHOLD: f64 = 0.3;

/// One chat-completion request. Identical field values produce identical
/// cache digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub role_system: String,
    pub role_user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        role_system: impl Into<String>,
        role_user: impl Into<String>,
    ) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            role_system: role_system.into(),
            role_user: role_user.into(),
            temperature: TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

/// Stable content digest over every request field. Any change to the
/// model, either message, or a sampling parameter yields a new digest.
pub fn cache_key(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    for part in [
        request.model_id.as_str(),
        request.role_system.as_str(),
        request.role_user.as_str(),
    ] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.update(request.temperature.to_le_bytes());
    hasher.update(request.max_tokens.to_le_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A completed chat call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
}

/// Call-site tag identifying which pipeline stage issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Esl,
    KnowledgeExpert,
    LabelExpert,
    PragmaticExpert,
    MetaJudge,
    Integrated,
    NoExpert,
    Base,
    RhetoricVoter,
}

/// One entry in the gateway call log; also the per-sample trace record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub model_id: String,
    pub digest: String,
    pub system: String,
    pub user: String,
    pub response: String,
}

/// Maps pipeline roles to model identifiers, so distinct models can back
/// label generation, each expert, the meta-judge, and rhetoric voters.
#[derive(Debug, Clone)]
pub struct ModelRouter {
    default_model: String,
    per_role: BTreeMap<Role, String>,
    voters: Vec<String>,
    max_tokens: u32,
}

impl ModelRouter {
    pub fn new(default_model: impl Into<String>) -> Self {
        ModelRouter {
            default_model: default_model.into(),
            per_role: BTreeMap::new(),
            voters: Vec::new(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_role(mut self, role: Role, model: impl Into<String>) -> Self {
        self.per_role.insert(role, model.into());
        self
    }

    pub fn with_voters(mut self, voters: Vec<String>) -> Self {
        self.voters = voters;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn model_for(&self, role: Role) -> &str {
        self.per_role
            .get(&role)
            .map(String::as_str)
            .unwrap_or(&self.default_model)
    }

    /// The three rhetoric-vote model ids, defaulting to three copies of
    /// the rhetoric-voter role model when unconfigured.
    pub fn voters(&self) -> Vec<String> {
        if self.voters.is_empty() {
            vec![self.model_for(Role::RhetoricVoter).to_string(); 3]
        } else {
            self.voters.clone()
        }
    }

    pub fn request(&self, role: Role, system: &str, user: &str) -> ChatRequest {
        ChatRequest::new(self.model_for(role), system, user).with_max_tokens(self.max_tokens)
    }

    pub fn request_for_model(&self, model: &str, system: &str, user: &str) -> ChatRequest {
        ChatRequest::new(model, system, user).with_max_tokens(self.max_tokens)
    }
}

/// Chat gateway: cache in front, backend behind, everything logged.
pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<ChatCache>,
    retry_pause: Duration,
    call_log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: Option<Arc<dyn ChatBackend>>, cache: Option<ChatCache>) -> Self {
        Gateway {
            backend,
            cache,
            retry_pause: Duration::from_millis(500),
            call_log: Mutex::new(Vec::new()),
        }
    }

    /// Replay-only gateway: cache hits or [`GatewayError::ReplayMiss`],
    /// never a live call.
    pub fn replay(cache: ChatCache) -> Self {
        Gateway::new(None, Some(cache))
    }

    pub fn with_retry_pause(mut self, pause: Duration) -> Self {
        self.retry_pause = pause;
        self
    }

    pub fn has_backend(&self) -> bool {
        self.backend.is_some()
    }

    /// Issues a chat request through the cache.
    ///
    /// Cache hit: returns the recorded content with `cached = true`.
    /// Miss with a backend: calls it (one retry on failure), records the
    /// response, returns `cached = false`. Miss without a backend:
    /// [`GatewayError::ReplayMiss`].
    pub fn chat(&self, role: Role, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.chat_traced(role, request).map(|(resp, _)| resp)
    }

    fn chat_traced(
        &self,
        role: Role,
        request: &ChatRequest,
    ) -> Result<(ChatResponse, CallRecord), GatewayError> {
        let digest = cache_key(request);
        let started = Instant::now();

        let response = match &self.cache {
            Some(cache) => {
                let (entry, was_cached) =
                    cache.get_or_insert_with(&digest, request, || self.call_backend(request))?;
                ChatResponse {
                    content: entry.response,
                    backend_id: entry.backend_id,
                    cached: was_cached,
                    latency_ms: started.elapsed().as_millis() as u64,
                }
            }
            None => {
                let (content, backend_id) = self.call_backend(request)?;
                ChatResponse {
                    content,
                    backend_id,
                    cached: false,
                    latency_ms: started.elapsed().as_millis() as u64,
                }
            }
        };

        let record = CallRecord {
            role,
            model_id: request.model_id.clone(),
            digest,
            system: request.role_system.clone(),
            user: request.role_user.clone(),
            response: response.content.clone(),
        };
        self.call_log.lock().unwrap().push(record.clone());
        Ok((response, record))
    }

    fn call_backend(&self, request: &ChatRequest) -> Result<(String, String), GatewayError> {
        let backend = self.backend.as_ref().ok_or_else(|| GatewayError::ReplayMiss {
            digest: cache_key(request),
        })?;
        let first = backend.complete(request);
        let content = match first {
            Ok(content) if !content.is_empty() => content,
            first_failure => {
                // One retry after a pause covers transient transport faults.
                std::thread::sleep(self.retry_pause);
                match backend.complete(request) {
                    Ok(content) if !content.is_empty() => content,
                    Ok(_) => {
                        return Err(GatewayError::BackendUnavailable {
                            backend_id: backend.id().to_string(),
                            reason: "backend returned empty content twice".to_string(),
                        })
                    }
                    Err(retry_failure) => {
                        let reason = match first_failure {
                            Err(e) => format!("{e}; retry: {retry_failure}"),
                            Ok(_) => format!("empty content; retry: {retry_failure}"),
                        };
                        return Err(GatewayError::BackendUnavailable {
                            backend_id: backend.id().to_string(),
                            reason,
                        });
                    }
                }
            }
        };
        Ok((content, backend.id().to_string()))
    }

    /// Snapshot of every call made through this gateway.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.call_log.lock().unwrap().clone()
    }

    pub fn clear_call_log(&self) {
        self.call_log.lock().unwrap().clear();
    }

    /// Per-sample view that additionally collects its own call records.
    pub fn scope(&self) -> GatewayScope<'_> {
        GatewayScope {
            gateway: self,
            calls: Mutex::new(Vec::new()),
        }
    }
}

/// A gateway view that records the calls made through it, so each
/// sample's trace contains exactly its own requests even when samples
/// run concurrently.
pub struct GatewayScope<'g> {
    gateway: &'g Gateway,
    calls: Mutex<Vec<CallRecord>>,
}

impl GatewayScope<'_> {
    pub fn chat(&self, role: Role, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let (response, record) = self.gateway.chat_traced(role, request)?;
        self.calls.lock().unwrap().push(record);
        Ok(response)
    }

    pub fn into_calls(self) -> Vec<CallRecord> {
        self.calls.into_inner().unwrap()
    }
}

/// True for code points in the Han ideograph blocks.
pub(crate) fn is_han(c: char) -> bool {
    matches!(u32::from(c),
        0x4E00..=0x9FFF      // CJK Unified Ideographs
        | 0x3400..=0x4DBF    // Extension A
        | 0x20000..=0x2A6DF  // Extension B
        | 0x2A700..=0x2EBEF  // Extensions C-F
        | 0xF900..=0xFAFF    // Compatibility Ideographs
        | 0x2F800..=0x2FA1F  // Compatibility Supplement
    )
}

/// Unicode-range language detection with the default Han-ratio
/// threshold. Pure and total; letterless input defaults to English.
pub fn detect_language(text: &str) -> Language {
    detect_language_with(text, DEFAULT_LANG_THRESHOLD)
}

/// Returns `Zh` when the proportion of Han code points among alphabetic
/// code points exceeds `threshold`, else `En`.
pub fn detect_language_with(text: &str, threshold: f64) -> Language {
    let mut letters = 0usize;
    let mut han = 0usize;
    for c in text.chars() {
        if c.is_alphabetic() {
            letters += 1;
            if is_han(c) {
                han += 1;
            }
        }
    }
    if letters == 0 {
        return Language::En;
    }
    if han as f64 / letters as f64 > threshold {
        Language::Zh
    } else {
        Language::En
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct CountingBackend {
        inner: ScriptedChatBackend,
        calls: AtomicUsize,
    }

    impl ChatBackend for CountingBackend {
        fn id(&self) -> &str {
            "counting"
        }
        fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(request)
        }
    }

    fn pong_backend() -> Arc<CountingBackend> {
        Arc::new(CountingBackend {
            inner: ScriptedChatBackend::new("mock").respond_to("ping", "pong"),
            calls: AtomicUsize::new(0),
        })
    }

    #[test]
    fn cache_key_is_stable_and_sensitive() {
        let a = ChatRequest::new("m", "sys", "user text");
        let b = ChatRequest::new("m", "sys", "user text");
        assert_eq!(cache_key(&a), cache_key(&b));
        let c = ChatRequest::new("m", "sys", "user texT");
        assert_ne!(cache_key(&a), cache_key(&c));
        let d = ChatRequest::new("m2", "sys", "user text");
        assert_ne!(cache_key(&a), cache_key(&d));
        let e = a.clone().with_max_tokens(1024);
        assert_ne!(cache_key(&a), cache_key(&e));
        // Field boundaries matter: moving a character across fields must
        // not collide.
        let f = ChatRequest::new("m", "syst", "ext");
        let g = ChatRequest::new("m", "sys", "text");
        assert_ne!(cache_key(&f), cache_key(&g));
    }

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let backend = pong_backend();
        let gw = Gateway::new(
            Some(backend.clone()),
            Some(ChatCache::open(dir.path()).unwrap()),
        )
        .with_retry_pause(Duration::from_millis(1));
        let req = ChatRequest::new("m", "", "ping");
        let r1 = gw.chat(Role::Base, &req).unwrap();
        let r2 = gw.chat(Role::Base, &req).unwrap();
        assert!(!r1.cached);
        assert!(r2.cached);
        assert_eq!(r1.content, r2.content);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn replay_miss_for_unknown_request() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::replay(ChatCache::open(dir.path()).unwrap());
        let req = ChatRequest::new("m", "", "never recorded");
        match gw.chat(Role::Base, &req) {
            Err(GatewayError::ReplayMiss { digest }) => assert_eq!(digest, cache_key(&req)),
            other => panic!("expected ReplayMiss, got {other:?}"),
        }
    }

    #[test]
    fn scripted_mock_contract() {
        let backend = ScriptedChatBackend::new("mock").respond_to("ping", "pong");
        let gw = Gateway::new(Some(Arc::new(backend)), None);
        let resp = gw.chat(Role::Base, &ChatRequest::new("m", "", "ping")).unwrap();
        assert_eq!(resp.content, "pong");
    }

    #[test]
    fn retries_once_on_transport_failure() {
        struct FlakyBackend {
            failures_left: AtomicUsize,
            calls: AtomicUsize,
        }
        impl ChatBackend for FlakyBackend {
            fn id(&self) -> &str {
                "flaky"
            }
            fn complete(&self, _request: &ChatRequest) -> Result<String, GatewayError> {
                self.calls.fetch_add(1, Ordering::SeqCst);
                if self
                    .failures_left
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok()
                {
                    Err(GatewayError::BackendUnavailable {
                        backend_id: "flaky".into(),
                        reason: "transient".into(),
                    })
                } else {
                    Ok("recovered".to_string())
                }
            }
        }

        let backend = Arc::new(FlakyBackend {
            failures_left: AtomicUsize::new(1),
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(Some(backend.clone()), None)
            .with_retry_pause(Duration::from_millis(1));
        let resp = gw.chat(Role::Base, &ChatRequest::new("m", "", "x")).unwrap();
        assert_eq!(resp.content, "recovered");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);

        // Two consecutive failures exhaust the retry budget.
        let backend = Arc::new(FlakyBackend {
            failures_left: AtomicUsize::new(2),
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(Some(backend.clone()), None)
            .with_retry_pause(Duration::from_millis(1));
        assert!(gw.chat(Role::Base, &ChatRequest::new("m", "", "x")).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn concurrent_identical_requests_hit_backend_once() {
        let dir = tempfile::tempdir().unwrap();
        let backend = pong_backend();
        let gw = Gateway::new(
            Some(backend.clone()),
            Some(ChatCache::open(dir.path()).unwrap()),
        );
        let req = ChatRequest::new("m", "", "ping");
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.chat(Role::Base, &req).unwrap());
            }
        });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn scope_collects_only_its_own_calls() {
        let backend = ScriptedChatBackend::new("mock")
            .respond_to("ping", "pong")
            .respond_to("ding", "dong");
        let gw = Gateway::new(Some(Arc::new(backend)), None);
        let scope_a = gw.scope();
        let scope_b = gw.scope();
        scope_a.chat(Role::Base, &ChatRequest::new("m", "", "ping")).unwrap();
        scope_b.chat(Role::Base, &ChatRequest::new("m", "", "ding")).unwrap();
        let a = scope_a.into_calls();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].response, "pong");
        assert_eq!(gw.call_log().len(), 2);
    }

    #[test]
    fn detect_language_examples() {
        assert_eq!(detect_language("climate change is real"), Language::En);
        assert_eq!(detect_language("胡鑫宇案警方通报"), Language::Zh);
        // 3 Han letters out of 30 alphabetic code points: ratio 0.1 <= 0.3.
        assert_eq!(
            detect_language("Manjianghong 满江红 sues influencers"),
            Language::En
        );
        assert_eq!(detect_language("12345 !!!"), Language::En);
    }
}
