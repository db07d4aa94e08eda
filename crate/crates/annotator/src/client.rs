use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{AnnotatorError, AnnotatorResult};

pub const URL_ENV: &str = "FGAIF_ANNOTATOR_URL";
pub const KEY_ENV: &str = "FGAIF_ANNOTATOR_KEY";
pub const MODEL_ENV: &str = "FGAIF_ANNOTATOR_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorConfig {
    pub url: String,
    pub model: String,
    /// Sent as a bearer token when present.
    pub api_key: Option<String>,
    /// Maximum requests in flight.
    pub concurrency: usize,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each later one.
    pub initial_backoff: Duration,
    pub timeout: Duration,
    /// Replies are also persisted here when set, one file per cache key.
    pub cache_dir: Option<PathBuf>,
}

impl AnnotatorConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            concurrency: 8,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            cache_dir: None,
        }
    }

    /// Reads the endpoint from `FGAIF_ANNOTATOR_URL`, the token from
    /// `FGAIF_ANNOTATOR_KEY` and an optional model name from
    /// `FGAIF_ANNOTATOR_MODEL`.
    pub fn from_env() -> AnnotatorResult<Self> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| AnnotatorError::Config(format!("{URL_ENV} is not set")))?;
        let mut config = Self::new(url);
        config.api_key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(MODEL_ENV) {
            config.model = model;
        }
        Ok(config)
    }

    pub fn validate(&self) -> AnnotatorResult<()> {
        if self.url.is_empty() {
            return Err(AnnotatorError::Config("endpoint URL is empty".into()));
        }
        if self.concurrency == 0 || self.max_attempts == 0 {
            return Err(AnnotatorError::Config(
                "concurrency and max_attempts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One prompt, optionally about an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub text: String,
    /// URL or other reference the endpoint can resolve.
    pub image: Option<String>,
}

impl ChatRequest {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            image: None,
        }
    }

    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.text.as_bytes());
        h.update([0u8]);
        if let Some(image) = &self.image {
            h.update(image.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Chat-completion body: a single user message holding the prompt text and
/// the image reference, sampled at temperature 0.
pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.text})];
    if let Some(image) = &request.image {
        content.push(json!({"type": "image_url", "image_url": {"url": image}}));
    }
    json!({
        "model": model,
        "temperature": 0,
        "messages": [{"role": "user", "content": content}],
    })
}

fn message_text(message: &Value) -> Option<String> {
    match message.get("content").or_else(|| message.get("text"))? {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            (!texts.is_empty()).then(|| texts.join(""))
        }
        _ => None,
    }
}

/// Text of the first message of a reply. Accepts the `choices[0].message`
/// shape of chat-completion APIs and a bare `messages` list.
pub fn reply_text(reply: &Value) -> AnnotatorResult<String> {
    let first = reply
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .or_else(|| reply.get("messages").and_then(|m| m.get(0)));
    first
        .and_then(message_text)
        .ok_or_else(|| AnnotatorError::Reply(format!("no message text in {reply}")))
}

/// Blocking facade over an async HTTP client. Owns its runtime, so it must
/// not be called from inside another tokio runtime.
pub struct RemoteClient {
    config: AnnotatorConfig,
    http: reqwest::Client,
    runtime: tokio::runtime::Runtime,
    cache: Mutex<HashMap<String, String>>,
}

impl RemoteClient {
    pub fn new(config: AnnotatorConfig) -> AnnotatorResult<Self> {
        config.validate()?;
        if let Some(dir) = &config.cache_dir {
            std::fs::create_dir_all(dir).map_err(|source| AnnotatorError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AnnotatorError::Config(e.to_string()))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| AnnotatorError::Config(format!("cannot start runtime: {e}")))?;
        Ok(Self {
            config,
            http,
            runtime,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &AnnotatorConfig {
        &self.config
    }

    pub fn complete(&self, request: &ChatRequest) -> AnnotatorResult<String> {
        self.complete_many(std::slice::from_ref(request))
            .pop()
            .expect("one request, one reply")
    }

    /// Replies in request order, with at most `concurrency` requests in
    /// flight.
    pub fn complete_many(&self, requests: &[ChatRequest]) -> Vec<AnnotatorResult<String>> {
        self.runtime.block_on(
            stream::iter(requests)
                .map(|r| self.fetch(r))
                .buffered(self.config.concurrency)
                .collect(),
        )
    }

    fn cached(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.cache.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let path = self.config.cache_dir.as_ref()?.join(format!("{key}.txt"));
        let text = std::fs::read_to_string(path).ok()?;
        self.cache.lock().unwrap().insert(key.into(), text.clone());
        Some(text)
    }

    fn store(&self, key: &str, text: &str) -> AnnotatorResult<()> {
        self.cache.lock().unwrap().insert(key.into(), text.into());
        if let Some(dir) = &self.config.cache_dir {
            let path = dir.join(format!("{key}.txt"));
            std::fs::write(&path, text).map_err(|source| AnnotatorError::Io { path, source })?;
        }
        Ok(())
    }

    async fn fetch(&self, request: &ChatRequest) -> AnnotatorResult<String> {
        let key = request.cache_key();
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let body = request_body(&self.config.model, request);
        let mut delay = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.post(&body).await {
                Ok(text) => {
                    self.store(&key, &text)?;
                    return Ok(text);
                }
                Err(e) if e.is_transient() && attempt < self.config.max_attempts => {
                    log::warn!("annotator attempt {attempt} failed, retrying in {delay:?}: {e}");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn post(&self, body: &Value) -> AnnotatorResult<String> {
        let mut req = self.http.post(&self.config.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| AnnotatorError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| AnnotatorError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(AnnotatorError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| AnnotatorError::Reply(format!("{e}: {text}")))?;
        reply_text(&value)
    }
}
