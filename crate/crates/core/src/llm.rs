//! Chat-model abstraction, conversation memory and cassette types.

use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::prelude::*;
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConversationError {
    #[error("chat turns must have content")]
    EmptyContent,
    #[error("a conversation must start with a system or user turn")]
    StartsWithAssistant,
}

/// Append-only chat history. Agents receive memory as prior turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conversation {
    turns: Vec<ChatTurn>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_system(system: impl Into<String>) -> Self {
        let mut c = Self::new();
        c.push(Role::System, system);
        c
    }

    /// Appends a turn. Panics on an invariant violation; use
    /// [`Conversation::try_push`] for untrusted input.
    pub fn push(&mut self, role: Role, content: impl Into<String>) -> &mut Self {
        self.try_push(role, content).expect("valid chat turn");
        self
    }

    pub fn try_push(&mut self, role: Role, content: impl Into<String>) -> Result<(), ConversationError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(ConversationError::EmptyContent);
        }
        if self.turns.is_empty() && role == Role::Assistant {
            return Err(ConversationError::StartsWithAssistant);
        }
        self.turns.push(ChatTurn { role, content });
        Ok(())
    }

    pub fn user(&mut self, content: impl Into<String>) -> &mut Self {
        self.push(Role::User, content)
    }

    pub fn assistant(&mut self, content: impl Into<String>) -> &mut Self {
        self.push(Role::Assistant, content)
    }

    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_user(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str())
    }

    pub fn system(&self) -> Option<&str> {
        self.turns.first().filter(|t| t.role == Role::System).map(|t| t.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { model_id: "deepseek-chat".into(), temperature: 0.0, max_tokens: 2048, timeout_secs: 120 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ChatError> {
        if !(self.temperature >= 0.0) {
            return Err(ChatError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.model_id.trim().is_empty() {
            return Err(ChatError::Config("model id is empty".into()));
        }
        Ok(())
    }
}

/// Canonical request body hashed for the cassette key. Credentials,
/// endpoints and timeouts are not part of it.
pub fn digest_input(conv: &Conversation, cfg: &ModelConfig) -> Value {
    let messages: Vec<Value> =
        conv.turns().iter().map(|t| json!({ "content": t.content, "role": t.role.as_str() })).collect();
    json!({
        "max_tokens": cfg.max_tokens,
        "messages": messages,
        "model_id": cfg.model_id,
        "temperature": cfg.temperature,
    })
}

/// Hex SHA-256 of the canonical request.
pub fn request_digest(conv: &Conversation, cfg: &ModelConfig) -> String {
    let body = serde_json::to_string(&digest_input(conv, cfg)).expect("values serialize");
    sha256_hex(body.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Transport attempts spent, 1 when the first try succeeded.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChatError {
    #[error("no cassette entry for request digest {digest}")]
    CassetteMiss { digest: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("provider returned HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, body: String, attempts: u32 },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

/// Anything that can answer a conversation: an HTTP provider, a cassette,
/// or a scripted test double.
pub trait ChatModel: Send + Sync {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError>;
}

impl<M: ChatModel + ?Sized> ChatModel for &M {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        (**self).complete(conv, cfg)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for Box<M> {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        (**self).complete(conv, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteMetadata {
    pub model_id: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub response: String,
    pub model_id: String,
}

/// Recorded responses keyed by [`request_digest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub metadata: CassetteMetadata,
    pub entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn new(model_id: &str, created_at: &str) -> Self {
        Cassette {
            metadata: CassetteMetadata { model_id: model_id.into(), created_at: created_at.into() },
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, digest: &str) -> Option<&CassetteEntry> {
        self.entries.get(digest)
    }

    /// Records a response; an existing entry for the digest is kept.
    pub fn insert(&mut self, digest: String, response: String, model_id: &str) -> bool {
        if self.entries.contains_key(&digest) {
            return false;
        }
        self.entries.insert(digest, CassetteEntry { response, model_id: model_id.into() });
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, ChatError> {
        serde_json::from_str(text).map_err(|e| ChatError::Cassette(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cassette serializes")
    }
}

/// Replays a cassette without any transport.
#[derive(Debug, Clone)]
pub struct Replay {
    cassette: Cassette,
}

impl Replay {
    pub fn new(cassette: Cassette) -> Self {
        Replay { cassette }
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }
}

impl ChatModel for Replay {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        let digest = request_digest(conv, cfg);
        match self.cassette.get(&digest) {
            Some(e) => Ok(Completion { text: e.response.clone(), attempts: 1 }),
            None => Err(ChatError::CassetteMiss { digest }),
        }
    }
}

/// Wraps a closure as a model; used for scripted agents in tests and for
/// recording fixtures.
pub struct FnModel<F>(pub F);

impl<F> ChatModel for FnModel<F>
where
    F: Fn(&Conversation) -> Result<String, ChatError> + Send + Sync,
{
    fn complete(&self, conv: &Conversation, _cfg: &ModelConfig) -> Result<Completion, ChatError> {
        (self.0)(conv).map(|text| Completion { text, attempts: 1 })
    }
}

/// Counts calls that reach the inner model.
pub struct Counting<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M> Counting<M> {
    pub fn new(inner: M) -> Self {
        Counting { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ChatModel> ChatModel for Counting<M> {
    fn complete(&self, conv: &Conversation, cfg: &ModelConfig) -> Result<Completion, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(conv, cfg)
    }
}

impl fmt::Display for ChatTurn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.role.as_str(), self.content)
    }
}
