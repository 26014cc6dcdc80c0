//! Threaded batching, the OpenAI-compatible HTTP backend and backend
//! construction from a run configuration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use aeg_core::{Backend, LlmError, MockBackend, MockRules, PromptRequest};
use base64::Engine;
use serde_json::json;

use crate::cache::{sha256, CacheKey, ResponseCache};
use crate::config::{BackendKind, HttpSettings, RunConfig};
use crate::error::AegError;
use crate::format::MockRulesFile;

pub const API_KEY_VAR: &str = "AEG_LLM_API_KEY";
const EXCERPT_CHARS: usize = 200;

/// Runs each batch on up to `workers` threads. Results keep request order,
/// so outputs do not depend on the worker count.
#[derive(Debug)]
pub struct Parallel<B> {
    inner: B,
    workers: usize,
}

impl<B> Parallel<B> {
    pub fn new(inner: B, workers: usize) -> Self {
        Self { inner, workers: workers.max(1) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend + Sync> Backend for Parallel<B> {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[PromptRequest]) -> Vec<Result<String, LlmError>> {
        let n = requests.len();
        if self.workers == 1 || n <= 1 {
            return requests.iter().map(|r| self.inner.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<OnceLock<Result<String, LlmError>>> = (0..n).map(|_| OnceLock::new()).collect();
        thread::scope(|s| {
            for _ in 0..self.workers.min(n) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let _ = slots[i].set(self.inner.complete(&requests[i]));
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().expect("every request completed")).collect()
    }
}

fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Chat-completions client with retries and an optional response cache.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    settings: HttpSettings,
    agent: ureq::Agent,
    image_root: Option<PathBuf>,
    cache: Option<ResponseCache>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, settings: HttpSettings) -> Result<Self, LlmError> {
        let api_key = api_key.filter(|k| !k.trim().is_empty()).ok_or_else(|| LlmError::AuthMissing(API_KEY_VAR.into()))?;
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(settings.timeout_secs)).build();
        Ok(Self { endpoint: endpoint.into(), api_key, settings, agent, image_root: None, cache: None })
    }

    /// Reads the key from `AEG_LLM_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>, settings: HttpSettings) -> Result<Self, LlmError> {
        Self::new(endpoint, std::env::var(API_KEY_VAR).ok(), settings)
    }

    /// Relative image paths resolve against `root`.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn load_image(&self, image: &str) -> Result<(String, [u8; 32]), LlmError> {
        let p = Path::new(image);
        let path = match &self.image_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        };
        let bytes = std::fs::read(&path).map_err(|e| LlmError::Image(format!("{}: {e}", path.display())))?;
        let data = base64::engine::general_purpose::STANDARD.encode(&bytes);
        Ok((format!("data:{};base64,{data}", mime_for(&path)), sha256(&bytes)))
    }

    pub fn body(request: &PromptRequest, image_url: Option<&str>) -> serde_json::Value {
        let mut user = vec![json!({"type": "text", "text": request.user_text})];
        if let Some(url) = image_url {
            user.push(json!({"type": "image_url", "image_url": {"url": url}}));
        }
        json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": user},
            ],
        })
    }

    fn post_once(&self, body: &str) -> Result<String, (bool, LlmError)> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(body);
        match resp {
            Ok(r) => r.into_string().map_err(|e| (true, LlmError::Transport { status: 0, excerpt: e.to_string() })),
            Err(ureq::Error::Status(429, _)) => Err((true, LlmError::RateLimited)),
            Err(ureq::Error::Status(status, r)) => {
                let text = r.into_string().unwrap_or_default();
                Err((status >= 500, LlmError::Transport { status, excerpt: excerpt(&text) }))
            }
            Err(ureq::Error::Transport(t)) => Err((true, LlmError::Transport { status: 0, excerpt: excerpt(&t.to_string()) })),
        }
    }

    /// Posts with exponential backoff on rate limits, server errors and
    /// connection failures.
    fn post(&self, body: &str) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Ok(text) => return Ok(text),
                Err((retryable, e)) if retryable && attempt < self.settings.max_retries => {
                    let delay = self.settings.retry_base_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("request failed ({e}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

/// First choice's message text of a chat-completions response.
pub fn extract_content(raw: &str) -> Result<String, LlmError> {
    let bad = || LlmError::Backend(format!("unexpected response: {}", excerpt(raw)));
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|_| bad())?;
    let content = &v["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Ok(s.to_string());
    }
    let parts = content.as_array().ok_or_else(bad)?;
    Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""))
}

impl Backend for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        let image = request.image.as_deref().map(|i| self.load_image(i)).transpose()?;
        let key = CacheKey::new(request, image.as_ref().map(|(_, d)| d));
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            log::debug!("cache hit {}", key.hex());
            return Ok(hit);
        }
        let body = Self::body(request, image.as_ref().map(|(u, _)| u.as_str())).to_string();
        let text = extract_content(&self.post(&body)?)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &text) {
                log::warn!("cache write {} failed: {e}", key.hex());
            }
        }
        Ok(text)
    }
}

pub type DynBackend = Box<dyn Backend + Send + Sync>;

pub fn load_mock_rules(cfg: &RunConfig) -> Result<MockRules, AegError> {
    match cfg.mock_rules_path() {
        Some(path) => Ok(crate::io::read_json::<MockRulesFile>(&path)?.into()),
        None => Ok(MockRules::default()),
    }
}

/// Backend for a run. `image_root` is where relative frame paths live.
pub fn make_backend(cfg: &RunConfig, image_root: Option<&Path>) -> Result<Parallel<DynBackend>, AegError> {
    let inner: DynBackend = match cfg.backend {
        BackendKind::Mock => Box::new(MockBackend::new(load_mock_rules(cfg)?)),
        BackendKind::Http => {
            let mut b = HttpBackend::from_env(cfg.endpoint.clone(), cfg.http.clone())?;
            if let Some(root) = image_root {
                b = b.with_image_root(root);
            }
            if let Some(dir) = cfg.cache_path() {
                b = b.with_cache(ResponseCache::new(dir));
            }
            Box::new(b)
        }
    };
    Ok(Parallel::new(inner, cfg.concurrency))
}
