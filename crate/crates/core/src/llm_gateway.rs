//! Chat-completion gateway.
//!
//! [`ChatGateway`] fronts either a remote chat-completions endpoint or a
//! deterministic stub. Every call goes through [`ChatGateway::complete`],
//! which records it in the gateway's [`CallLog`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt;

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_MAX_ANSWER_TOKENS: usize = 1000;
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

pub const STUB_PREFIX: &str = "STUB ANSWER\n";
pub const STUB_NO_CONTEXT: &str = "(no context)";
const STUB_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("chat service unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("chat service refused: {0}")]
    RemoteRefusal(String),
    #[error("chat service timed out after {0} s")]
    Timeout(u64),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
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
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_answer_tokens: usize,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |msg: &str| Err(GatewayError::InvalidRequest(msg.to_owned()));
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return invalid("first message must have the system role"),
        }
        if self
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .count()
            != 1
        {
            return invalid("exactly one user message is required");
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::Assistant && m.content.is_empty())
        {
            return invalid("system and user messages must be non-empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        if self.max_answer_tokens == 0 {
            return invalid("max_answer_tokens must be positive");
        }
        Ok(())
    }

    pub fn user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Stub,
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProviderKind::Remote => "remote",
            ProviderKind::Stub => "stub",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub provider: ProviderKind,
}

/// Model and sampling settings attached to every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_answer_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo-16k".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: ProviderKind,
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: ProviderKind::Stub,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

/// Count and most recent request of every `complete` call.
#[derive(Debug, Default)]
pub struct CallLog {
    count: AtomicUsize,
    last: Mutex<Option<ChatRequest>>,
}

impl CallLog {
    fn record(&self, req: &ChatRequest) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        self.count.fetch_add(1, Ordering::SeqCst);
        *last = Some(req.clone());
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn last_request(&self) -> Option<ChatRequest> {
        self.last.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Answers with a fixed prefix followed by the start of context entry [1].
pub fn stub_complete(req: &ChatRequest) -> ChatResponse {
    let first = req
        .user_message()
        .and_then(|text| prompt::parse_user_message(text).ok())
        .and_then(|parsed| parsed.entries.into_iter().next());
    let body = match first {
        Some(entry) => entry.content.chars().take(STUB_EXCERPT_CHARS).collect(),
        None => STUB_NO_CONTEXT.to_owned(),
    };
    ChatResponse {
        content: format!("{STUB_PREFIX}{body}"),
        provider: ProviderKind::Stub,
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: usize,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteChatClient {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
    timeout_secs: u64,
}

impl RemoteChatClient {
    pub fn new(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let timeout_secs = cfg.timeout_secs.max(1);
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| GatewayError::RemoteUnavailable(e.to_string()))?;
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&cfg.api_key_env).ok()
        };
        Ok(Self {
            client,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
            timeout_secs,
        })
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut request = self.client.post(&self.url).json(&WireRequest {
            model: &req.model,
            temperature: req.temperature,
            max_tokens: req.max_answer_tokens,
            messages: &req.messages,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| self.transport_error(e))?;
        let status = response.status();
        let body = response.text().await.map_err(|e| self.transport_error(e))?;
        let parsed: Option<WireResponse> = serde_json::from_str(&body).ok();
        if let Some(error) = parsed.as_ref().and_then(|p| p.error.as_ref()) {
            return Err(GatewayError::RemoteRefusal(error.to_string()));
        }
        if !status.is_success() {
            return Err(GatewayError::RemoteUnavailable(format!(
                "HTTP {status}: {body}"
            )));
        }
        let parsed = parsed.ok_or_else(|| {
            GatewayError::RemoteRefusal(format!("unparseable response body: {body}"))
        })?;
        match parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
        {
            Some(content) if !content.is_empty() => Ok(ChatResponse {
                content,
                provider: ProviderKind::Remote,
            }),
            _ => Err(GatewayError::RemoteRefusal("empty completion".into())),
        }
    }

    fn transport_error(&self, e: reqwest::Error) -> GatewayError {
        if e.is_timeout() {
            GatewayError::Timeout(self.timeout_secs)
        } else {
            GatewayError::RemoteUnavailable(e.to_string())
        }
    }
}

#[derive(Debug, Clone)]
pub enum ChatProvider {
    Remote(RemoteChatClient),
    Stub,
}

#[derive(Debug)]
pub struct ChatGateway {
    provider: ChatProvider,
    log: CallLog,
}

impl ChatGateway {
    pub fn new(provider: ChatProvider) -> Self {
        Self {
            provider,
            log: CallLog::default(),
        }
    }

    pub fn stub() -> Self {
        Self::new(ChatProvider::Stub)
    }

    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self::new(match cfg.mode {
            ProviderKind::Stub => ChatProvider::Stub,
            ProviderKind::Remote => ChatProvider::Remote(RemoteChatClient::new(cfg)?),
        }))
    }

    pub fn kind(&self) -> ProviderKind {
        match self.provider {
            ChatProvider::Remote(_) => ProviderKind::Remote,
            ChatProvider::Stub => ProviderKind::Stub,
        }
    }

    pub fn call_log(&self) -> &CallLog {
        &self.log
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.log.record(req);
        match &self.provider {
            ChatProvider::Stub => Ok(stub_complete(req)),
            ChatProvider::Remote(client) => client.complete(req).await,
        }
    }
}
