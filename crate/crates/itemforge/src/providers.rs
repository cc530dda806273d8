//! The single gateway to external LLM and embedding services: request
//! construction, content-addressed response caching, retry with backoff,
//! bounded in-flight requests, and a recorded-replay backend so every
//! pipeline stage can be rerun offline deterministically.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;

pub const API_KEY_ENV: &str = "ITEMFORGE_API_KEY";
pub const BASE_URL_ENV: &str = "ITEMFORGE_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSettings {
    pub temperature: f64,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self { temperature: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Chat,
    Embed,
}

/// A provider request. The cache key is a pure function of every field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub kind: RequestKind,
    pub model: String,
    pub inputs: Vec<ChatMessage>,
    pub sampling: SamplingSettings,
}

impl ProviderRequest {
    pub fn chat(model: &str, messages: Vec<ChatMessage>, sampling: SamplingSettings) -> Self {
        Self { kind: RequestKind::Chat, model: model.into(), inputs: messages, sampling }
    }

    fn embed_one(model: &str, text: &str) -> Self {
        Self {
            kind: RequestKind::Embed,
            model: model.into(),
            inputs: vec![ChatMessage { role: "input".into(), content: text.into() }],
            sampling: SamplingSettings { temperature: 0.0 },
        }
    }

    /// Content hash over all request fields.
    pub fn cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("request serializes"));
        hex::encode(hasher.finalize())
    }
}

// Tiny hex encoder so we don't pull in another crate for one call site.
mod hex {
    pub fn encode(bytes: impl AsRef<[u8]>) -> String {
        bytes.as_ref().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub payload: String,
    pub timestamp: u64,
    pub attempts: u32,
}

/// Append-only JSONL response cache. Keys are unique, so concurrent appends
/// cannot conflict on content; the file lock serializes the writes.
pub struct ResponseCache {
    path: Option<PathBuf>,
    records: Mutex<HashMap<String, CacheRecord>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, records: Mutex::new(HashMap::new()) }
    }

    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)?;
                records.insert(rec.cache_key.clone(), rec);
            }
        }
        Ok(Self { path: Some(path.to_path_buf()), records: Mutex::new(records) })
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.records.lock().unwrap().get(key).cloned()
    }

    pub fn put(&self, rec: CacheRecord) -> Result<(), ProviderError> {
        let mut map = self.records.lock().unwrap();
        if map.contains_key(&rec.cache_key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        map.insert(rec.cache_key.clone(), rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that can satisfy chat and embedding requests.
pub trait Provider: Send + Sync {
    fn chat(&self, request: &ProviderRequest) -> Result<String, ProviderError>;

    /// One vector per text, order-preserving.
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyBatch);
        }
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let req = ProviderRequest::embed_one(model, text);
            let payload = self.chat(&req)?;
            let v: Vec<f64> = serde_json::from_str(&payload)
                .map_err(|e| ProviderError::Malformed(format!("embedding payload: {e}")))?;
            out.push(v);
        }
        let dim = out[0].len();
        if let Some(bad) = out.iter().find(|v| v.len() != dim) {
            return Err(ProviderError::DimensionMismatch(dim, bad.len()));
        }
        Ok(out)
    }
}

/// Counting semaphore for the per-endpoint in-flight request cap.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Live HTTP provider speaking the de-facto chat-completions JSON shape
/// (messages array in, choices array out), so any compatible endpoint works.
pub struct HttpProvider {
    base_url: String,
    api_key: String,
    cache: ResponseCache,
    max_attempts: u32,
    inflight: Semaphore,
}

impl HttpProvider {
    pub fn from_env(cache: ResponseCache, max_inflight: usize) -> Result<Self, ProviderError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| ProviderError::MissingCredentials(API_KEY_ENV.into()))?;
        let base_url = std::env::var(BASE_URL_ENV)
            .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        Ok(Self::new(base_url, api_key, cache, max_inflight))
    }

    pub fn new(
        base_url: String,
        api_key: String,
        cache: ResponseCache,
        max_inflight: usize,
    ) -> Self {
        Self {
            base_url,
            api_key,
            cache,
            max_attempts: 5,
            inflight: Semaphore::new(max_inflight.max(1)),
        }
    }

    fn call_once(&self, request: &ProviderRequest) -> Result<String, String> {
        let _permit = self.inflight.acquire();
        match request.kind {
            RequestKind::Chat => {
                let url = format!("{}/chat/completions", self.base_url);
                let body = serde_json::json!({
                    "model": request.model,
                    "messages": request.inputs,
                    "temperature": request.sampling.temperature,
                });
                let resp = ureq::post(&url)
                    .set("Authorization", &format!("Bearer {}", self.api_key))
                    .send_json(body)
                    .map_err(|e| e.to_string())?;
                let json: serde_json::Value =
                    resp.into_json().map_err(|e| e.to_string())?;
                json["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| "no choices[0].message.content in response".to_string())
            }
            RequestKind::Embed => {
                let url = format!("{}/embeddings", self.base_url);
                let body = serde_json::json!({
                    "model": request.model,
                    "input": request.inputs[0].content,
                });
                let resp = ureq::post(&url)
                    .set("Authorization", &format!("Bearer {}", self.api_key))
                    .send_json(body)
                    .map_err(|e| e.to_string())?;
                let json: serde_json::Value =
                    resp.into_json().map_err(|e| e.to_string())?;
                let vec = json["data"][0]["embedding"]
                    .as_array()
                    .ok_or_else(|| "no data[0].embedding in response".to_string())?;
                serde_json::to_string(vec).map_err(|e| e.to_string())
            }
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Provider for HttpProvider {
    fn chat(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let key = request.cache_key();
        if let Some(rec) = self.cache.get(&key) {
            return Ok(rec.payload);
        }
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.call_once(request) {
                Ok(payload) => {
                    self.cache.put(CacheRecord {
                        cache_key: key,
                        payload: payload.clone(),
                        timestamp: now_secs(),
                        attempts: attempt,
                    })?;
                    return Ok(payload);
                }
                Err(e) => {
                    last = e;
                    if attempt < self.max_attempts {
                        let backoff =
                            Duration::from_millis((500u64 << (attempt - 1)).min(8_000));
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
        Err(ProviderError::Exhausted { attempts: self.max_attempts, last })
    }
}

/// Strict replay over a recorded cache: a miss is an error, never a network
/// call, which makes every downstream stage a pure function of its inputs.
pub struct ReplayProvider {
    cache: ResponseCache,
}

impl ReplayProvider {
    pub fn new(cache: ResponseCache) -> Self {
        Self { cache }
    }

    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self { cache: ResponseCache::open(path)? })
    }
}

impl Provider for ReplayProvider {
    fn chat(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        self.cache
            .get(&request.cache_key())
            .map(|r| r.payload)
            .ok_or(ProviderError::StrictReplayMiss)
    }
}

/// Scripted provider for tests: answers from a fixed function of the request.
pub struct MockProvider<F>
where
    F: Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync,
{
    respond: F,
    pub calls: Mutex<Vec<ProviderRequest>>,
}

impl<F> MockProvider<F>
where
    F: Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond, calls: Mutex::new(Vec::new()) }
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl<F> Provider for MockProvider<F>
where
    F: Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn chat(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        self.calls.lock().unwrap().push(request.clone());
        (self.respond)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_is_pure_function_of_fields() {
        let a = ProviderRequest::chat("m", vec![ChatMessage::user("hi")], SamplingSettings::default());
        let b = ProviderRequest::chat("m", vec![ChatMessage::user("hi")], SamplingSettings::default());
        assert_eq!(a.cache_key(), b.cache_key());
        let c = ProviderRequest::chat("m2", vec![ChatMessage::user("hi")], SamplingSettings::default());
        assert_ne!(a.cache_key(), c.cache_key());
        let d = ProviderRequest::chat(
            "m",
            vec![ChatMessage::user("hi")],
            SamplingSettings { temperature: 0.7 },
        );
        assert_ne!(a.cache_key(), d.cache_key());
    }

    #[test]
    fn cache_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ResponseCache::open(&path).unwrap();
        cache
            .put(CacheRecord {
                cache_key: "k1".into(),
                payload: "hello".into(),
                timestamp: 1,
                attempts: 1,
            })
            .unwrap();
        drop(cache);
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.get("k1").unwrap().payload, "hello");
        assert_eq!(reopened.len(), 1);
    }

    #[test]
    fn replay_miss_is_strict_error() {
        let replay = ReplayProvider::new(ResponseCache::in_memory());
        let req =
            ProviderRequest::chat("m", vec![ChatMessage::user("unseen")], SamplingSettings::default());
        assert!(matches!(replay.chat(&req), Err(ProviderError::StrictReplayMiss)));
    }

    #[test]
    fn replay_hit_returns_recorded_payload() {
        let cache = ResponseCache::in_memory();
        let req =
            ProviderRequest::chat("m", vec![ChatMessage::user("q")], SamplingSettings::default());
        cache
            .put(CacheRecord {
                cache_key: req.cache_key(),
                payload: "recorded".into(),
                timestamp: 0,
                attempts: 1,
            })
            .unwrap();
        let replay = ReplayProvider::new(cache);
        assert_eq!(replay.chat(&req).unwrap(), "recorded");
    }

    #[test]
    fn embed_batch_cardinality_and_dimension() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            assert_eq!(req.kind, RequestKind::Embed);
            Ok("[1.0, 2.0, 3.0]".to_string())
        });
        let texts = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let vecs = mock.embed(&texts, "emb").unwrap();
        assert_eq!(vecs.len(), 3);
        assert!(vecs.iter().all(|v| v.len() == 3));
        assert!(matches!(mock.embed(&[], "emb"), Err(ProviderError::EmptyBatch)));
    }

    #[test]
    fn embed_dimension_mismatch_errors() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            if req.inputs[0].content == "short" {
                Ok("[1.0]".to_string())
            } else {
                Ok("[1.0, 2.0]".to_string())
            }
        });
        let texts = vec!["long".to_string(), "short".to_string()];
        assert!(matches!(mock.embed(&texts, "emb"), Err(ProviderError::DimensionMismatch(2, 1))));
    }
}
