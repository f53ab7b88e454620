//! HTTP providers for an OpenAI-compatible chat-completions endpoint and a
//! JSON captioning endpoint.
//!
//! Every request body is hashed (SHA-256 over URL and canonical JSON body,
//! never the API key) and the raw response bytes are stored as
//! `<cache_dir>/<hash>.json`. A cached request is never re-sent, so replays
//! are byte-identical and work offline.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latfile;
use crate::semantic::caption::Captioner;
use crate::semantic::prompt::{AnchorSet, AttackIntent, Prompt};
use crate::semantic::propose::{
    parse_candidate_lines, render_meta_prompt, render_user_message, Proposer, DEFAULT_META_PROMPT,
};
use crate::tensor::LatentTensor;

pub const DEFAULT_API_KEY_ENV: &str = "CSI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub chat_model: String,
    pub caption_model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub cache_dir: PathBuf,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub temperature: f64,
    /// Serve only from the cache; a miss is an error.
    pub offline: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4o-mini".into(),
            caption_model: "blip-base".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            cache_dir: PathBuf::from("llm-cache"),
            max_in_flight: 4,
            timeout_secs: 60,
            temperature: 0.7,
            offline: false,
        }
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(url: &str, body: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(url.as_bytes());
        h.update(b"\n");
        h.update(body);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<u8>>> {
        let path = self.path(key);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, bytes: &[u8]) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(key);
        let tmp = self.dir.join(format!("{key}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Counting gate bounding concurrent in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("gate poisoned");
            while *free == 0 {
                free = self.cv.wait(free).expect("gate poisoned");
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().expect("gate poisoned") += 1;
        self.cv.notify_one();
        out
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    cache: ResponseCache,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("cfg", &self.cfg).finish()
    }
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .new_agent();
        Self {
            cache: ResponseCache::new(cfg.cache_dir.clone()),
            gate: Gate::new(cfg.max_in_flight),
            agent,
            cfg,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), endpoint)
    }

    /// POSTs `body` to `endpoint`, answering from the cache when possible.
    pub fn post_json(&self, endpoint: &str, body: &Value) -> Result<Vec<u8>> {
        let url = self.url(endpoint);
        let payload = serde_json::to_vec(body)?;
        let key = ResponseCache::key(&url, &payload);
        if let Some(hit) = self.cache.get(&key)? {
            log::debug!("cache hit {key} for {url}");
            return Ok(hit);
        }
        if self.cfg.offline {
            return Err(Error::Provider(format!("offline and no cached response for {url}")));
        }
        let bytes = self.gate.run(|| self.send(&url, &payload))?;
        self.cache.put(&key, &bytes)?;
        Ok(bytes)
    }

    fn send(&self, url: &str, payload: &[u8]) -> Result<Vec<u8>> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req
            .send(payload)
            .map_err(|e| Error::Provider(format!("request to {url} failed: {e}")))?;
        resp.into_body()
            .read_to_vec()
            .map_err(|e| Error::Provider(format!("reading response from {url}: {e}")))
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

/// Candidate proposer backed by a chat-completions endpoint.
#[derive(Debug)]
pub struct RemoteProposer {
    client: Arc<RemoteClient>,
    template: String,
}

impl RemoteProposer {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        Self {
            client,
            template: DEFAULT_META_PROMPT.to_string(),
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn request_body(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent, m: usize) -> Value {
        json!({
            "model": self.client.config().chat_model,
            "temperature": self.client.config().temperature,
            "messages": [
                {"role": "system", "content": render_meta_prompt(&self.template, g, intent)},
                {"role": "user", "content": render_user_message(t0, intent, m)},
            ],
        })
    }
}

impl Proposer for RemoteProposer {
    fn propose(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent, m: usize) -> Result<Vec<Prompt>> {
        if m == 0 {
            return Err(Error::config("candidate count must be at least 1"));
        }
        let body = self.request_body(t0, g, intent, m);
        let bytes = self.client.post_json("chat/completions", &body)?;
        let resp: ChatResponse = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Provider(format!("malformed chat completion: {e}")))?;
        let content = resp
            .choices
            .first()
            .map(|c| c.message.content.as_str())
            .ok_or_else(|| Error::Provider("chat completion has no choices".into()))?;
        parse_candidate_lines(content, m)
    }
}

#[derive(Debug, Deserialize)]
struct CaptionResponse {
    caption: String,
}

/// Captioner posting `{"model", "latent": <.lat text>}` to `<base>/captions`
/// and reading `{"caption": ...}` back.
#[derive(Debug)]
pub struct RemoteCaptioner {
    client: Arc<RemoteClient>,
}

impl RemoteCaptioner {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        Self { client }
    }
}

impl Captioner for RemoteCaptioner {
    fn caption(&self, x: &LatentTensor) -> Result<Prompt> {
        let body = json!({
            "model": self.client.config().caption_model,
            "latent": latfile::encode(x),
        });
        let bytes = self.client.post_json("captions", &body)?;
        let resp: CaptionResponse = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Provider(format!("malformed caption response: {e}")))?;
        Prompt::new(resp.caption)
    }
}
