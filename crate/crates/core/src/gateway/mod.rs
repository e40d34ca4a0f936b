//! Uniform access to chat-completion and embedding backends.
//!
//! Two families live here: the remote OpenAI-compatible client
//! ([`remote`]) and the deterministic scripted oracle ([`scripted`]) used
//! by tests and desk-scale experiments. Embedding providers are in
//! [`embedding`].

pub mod embedding;
pub mod remote;
pub mod scripted;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    cosine_similarity, EmbedError, Embedder, EmbeddingHandle, EmbeddingVector, LocalHashEmbedder,
};
pub use remote::{HttpTransport, OpenAiCompatBackend, RemoteEmbedder, ReqwestTransport};
pub use scripted::{Matcher, Responder, Rule, ScriptedOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
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

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        let first = self.messages.first().ok_or(RequestError::NoMessages)?;
        if first.role == Role::Assistant {
            return Err(RequestError::LeadingAssistant);
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(RequestError::Temperature(self.temperature));
        }
        if self.max_tokens == 0 {
            return Err(RequestError::ZeroMaxTokens);
        }
        Ok(())
    }

    /// Content of the last user message, or the empty string.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn system_prompt(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// All message contents joined with newlines, used by substring matchers.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("chat request has no messages")]
    NoMessages,
    #[error("first message must be a system or user message")]
    LeadingAssistant,
    #[error("temperature must be a finite value >= 0, got {0}")]
    Temperature(f64),
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }

    /// An error response. The diagnostic goes into `content` so callers can log it.
    pub fn error(diagnostic: impl Into<String>) -> Self {
        Self {
            content: diagnostic.into(),
            finish_reason: FinishReason::Error,
            usage: Usage::default(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

/// A chat-completion backend. Implementations never fail past this
/// boundary: transport and payload problems come back as
/// [`FinishReason::Error`] responses.
pub trait ChatBackend: Send + Sync {
    fn dispatch(&self, request: &ChatRequest) -> ChatResponse;

    /// Number of requests dispatched so far.
    fn call_count(&self) -> usize;

    fn describe(&self) -> String {
        "backend".to_string()
    }
}

pub type BackendHandle = Arc<dyn ChatBackend>;

/// Validate `request` and dispatch it.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
) -> Result<ChatResponse, RequestError> {
    request.validate()?;
    Ok(backend.dispatch(request))
}

/// The four call sites that own a backend handle. Handles are never shared
/// between roles so the conversationalist cannot leak state into the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallRole {
    Actor,
    Critic,
    BeliefFormer,
    Conversationalist,
}

impl CallRole {
    pub fn default_temperature(self) -> f64 {
        match self {
            CallRole::Critic | CallRole::BeliefFormer => 0.0,
            CallRole::Actor | CallRole::Conversationalist => 0.7,
        }
    }
}

/// Per-call parameters a role attaches to every request it builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CallParams {
    pub fn for_role(role: CallRole, model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: role.default_temperature(),
            max_tokens: 512,
        }
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest::new(self.model.clone(), messages)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

/// A backend handle bundled with the parameters of the role that owns it.
#[derive(Clone)]
pub struct RoleClient {
    pub backend: BackendHandle,
    pub params: CallParams,
}

impl fmt::Debug for RoleClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoleClient")
            .field("backend", &self.backend.describe())
            .field("params", &self.params)
            .finish()
    }
}

impl RoleClient {
    pub fn new(backend: BackendHandle, role: CallRole) -> Self {
        Self {
            backend,
            params: CallParams::for_role(role, "default"),
        }
    }

    pub fn with_params(backend: BackendHandle, params: CallParams) -> Self {
        Self { backend, params }
    }

    /// Build, validate and dispatch. Invalid requests are programming
    /// errors inside this crate, so they surface as error responses.
    pub fn call(&self, messages: Vec<Message>) -> ChatResponse {
        self.call_with_limit(messages, self.params.max_tokens)
    }

    pub fn call_with_limit(&self, messages: Vec<Message>, max_tokens: u32) -> ChatResponse {
        let request = self.params.request(messages).with_max_tokens(max_tokens);
        match complete(self.backend.as_ref(), &request) {
            Ok(response) => response,
            Err(err) => ChatResponse::error(format!("invalid request: {err}")),
        }
    }

    pub fn call_count(&self) -> usize {
        self.backend.call_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request_is_rejected_before_dispatch() {
        let oracle = ScriptedOracle::new("unused");
        let request = ChatRequest::new("m", vec![]);
        assert_eq!(complete(&oracle, &request), Err(RequestError::NoMessages));
        assert_eq!(oracle.call_count(), 0);
    }

    #[test]
    fn leading_assistant_is_rejected() {
        let oracle = ScriptedOracle::new("unused");
        let request = ChatRequest::new("m", vec![Message::assistant("hi")]);
        assert_eq!(
            complete(&oracle, &request),
            Err(RequestError::LeadingAssistant)
        );
    }

    #[test]
    fn consecutive_roles_need_not_alternate() {
        let request = ChatRequest::new("m", vec![Message::user("a"), Message::user("b")]);
        assert!(request.validate().is_ok());
    }

    #[test]
    fn role_temperatures() {
        assert_eq!(CallRole::Critic.default_temperature(), 0.0);
        assert_eq!(CallRole::BeliefFormer.default_temperature(), 0.0);
        assert_eq!(CallRole::Actor.default_temperature(), 0.7);
        assert_eq!(CallRole::Conversationalist.default_temperature(), 0.7);
    }
}
