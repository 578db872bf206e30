//! Chat-completion transport and cassette record/replay.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use typeforge_core::llm::{
    request_digest, Cassette, ChatError, ChatModel, Completion, Conversation, ModelConfig, Replay, Role,
};

pub const ENV_API_BASE: &str = "TYPEFORGE_API_BASE";
pub const ENV_API_KEY: &str = "TYPEFORGE_API_KEY";
pub const ENV_MODEL: &str = "TYPEFORGE_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!("unknown gateway mode `{other}` (expected live, record or replay)")),
        }
    }
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_secs(1), factor: 2 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n` (1-based); zero before the first.
    pub fn backoff(&self, n: u32) -> Duration {
        if n <= 1 {
            return Duration::ZERO;
        }
        self.initial_backoff * self.factor.saturating_pow(n - 2)
    }
}

/// Endpoint and credentials. The key never enters a digest or a cassette.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiSettings {
    pub base_url: String,
    pub api_key: Option<String>,
}

impl fmt::Debug for ApiSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApiSettings")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ApiSettings {
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_API_BASE).ok().filter(|s| !s.trim().is_empty())?;
        let api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(ApiSettings { base_url, api_key })
    }
}

/// OpenAI-style `/chat/completions` over blocking HTTP.
pub struct HttpModel {
    settings: ApiSettings,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpModel {
    pub fn new(settings: ApiSettings, retry: RetryPolicy, timeout: Duration) -> Result<Self, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpModel { settings, retry, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }
}

/// Request body. Adjacent turns of the same role are merged, since some
/// providers reject consecutive user messages.
pub fn wire_body(conv: &Conversation, cfg: &ModelConfig) -> Value {
    let mut messages: Vec<(Role, String)> = Vec::new();
    for t in conv.turns() {
        match messages.last_mut() {
            Some((role, content)) if *role == t.role => {
                content.push_str("\n\n");
                content.push_str(&t.content);
            }
            _ => messages.push((t.role, t.content.clone())),
        }
    }
    let messages: Vec<Value> =
        messages.into_iter().map(|(r, c)| json!({ "role": r.as_str(), "content": c })).collect();
    json!({
        "model": cfg.model_id,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "stream": false,
    })
}

fn response_text(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

impl ChatModel for HttpModel {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        cfg.validate()?;
        let body = wire_body(conv, cfg);
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            std::thread::sleep(self.retry.backoff(attempt));
            let mut req = self.client.post(self.endpoint()).json(&body);
            if let Some(key) = &self.settings.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if !status.is_success() {
                        return Err(ChatError::Http { status: status.as_u16(), body: text, attempts: attempt });
                    }
                    return response_text(&text)
                        .map(|text| Completion { text, attempts: attempt })
                        .map_err(|message| ChatError::Transport { message, attempts: attempt });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(ChatError::Transport { message: last, attempts: self.retry.max_attempts.max(1) })
    }
}

pub fn load_cassette(path: &Path) -> Result<Cassette, ChatError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ChatError::Cassette(format!("cannot read {}: {e}", path.display())))?;
    Cassette::from_json(&text)
}

/// Writes through a temporary file so a crash never leaves half a cassette.
pub fn save_cassette(path: &Path, cassette: &Cassette) -> Result<(), ChatError> {
    let err = |e: std::io::Error| ChatError::Cassette(format!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut text = cassette.to_json();
    text.push('\n');
    std::fs::write(&tmp, text).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

/// Forwards to a live model and stores every answer in the cassette file.
pub struct Recorder<M> {
    inner: M,
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl<M: ChatModel> Recorder<M> {
    /// Continues an existing cassette at `path` or starts a new one.
    pub fn open(inner: M, path: &Path, model_id: &str) -> Result<Self, ChatError> {
        let cassette = if path.exists() {
            load_cassette(path)?
        } else {
            Cassette::new(model_id, &chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        };
        Ok(Recorder { inner, path: path.to_path_buf(), cassette: Mutex::new(cassette) })
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }
}

impl<M: ChatModel> ChatModel for Recorder<M> {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        let out = self.inner.complete(conv, cfg)?;
        let digest = request_digest(conv, cfg);
        let mut cassette = self.cassette.lock().expect("cassette lock");
        if cassette.insert(digest, out.text.clone(), &cfg.model_id) {
            save_cassette(&self.path, &cassette)?;
        }
        Ok(out)
    }
}

/// Builds the model for a gateway mode. Replay never constructs an HTTP
/// client.
pub fn open(
    mode: GatewayMode,
    cassette: Option<&Path>,
    api: Option<ApiSettings>,
    retry: RetryPolicy,
    cfg: &ModelConfig,
) -> Result<Box<dyn ChatModel>, ChatError> {
    cfg.validate()?;
    let live = |api: Option<ApiSettings>| -> Result<HttpModel, ChatError> {
        let api = api.ok_or_else(|| ChatError::Config(format!("{ENV_API_BASE} is not set")))?;
        HttpModel::new(api, retry.clone(), Duration::from_secs(cfg.timeout_secs))
    };
    match mode {
        GatewayMode::Live => Ok(Box::new(live(api)?)),
        GatewayMode::Record => {
            let path = cassette.ok_or_else(|| ChatError::Config("record mode needs --cassette".into()))?;
            Ok(Box::new(Recorder::open(live(api)?, path, &cfg.model_id)?))
        }
        GatewayMode::Replay => {
            let path = cassette.ok_or_else(|| ChatError::Config("replay mode needs --cassette".into()))?;
            Ok(Box::new(Replay::new(load_cassette(path)?)))
        }
    }
}
