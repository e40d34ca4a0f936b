//! OpenAI-compatible request and response bodies.

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, FinishReason, Message, Usage};

#[derive(Debug, Serialize)]
pub struct WireChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [Message],
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl<'a> From<&'a ChatRequest> for WireChatRequest<'a> {
    fn from(r: &'a ChatRequest) -> Self {
        Self {
            model: &r.model,
            messages: &r.messages,
            temperature: r.temperature,
            max_tokens: r.max_tokens,
            seed: r.seed,
        }
    }
}

pub fn encode_chat_request(request: &ChatRequest) -> String {
    serde_json::to_string(&WireChatRequest::from(request)).expect("chat request serializes")
}

#[derive(Debug, Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireAssistantMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireAssistantMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

const EXCERPT_CHARS: usize = 200;

pub fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

/// Parse a chat-completions body. Malformed bodies become error responses
/// carrying a raw excerpt.
pub fn decode_chat_response(body: &str) -> ChatResponse {
    let parsed: WireChatResponse = match serde_json::from_str(body) {
        Ok(p) => p,
        Err(err) => {
            return ChatResponse::error(format!(
                "malformed completion body ({err}): {}",
                excerpt(body)
            ))
        }
    };
    let Some(choice) = parsed.choices.into_iter().next() else {
        return ChatResponse::error(format!("completion body has no choices: {}", excerpt(body)));
    };
    let content = choice.message.content.unwrap_or_default();
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    if content.is_empty() {
        return ChatResponse::error(format!(
            "completion body has empty content: {}",
            excerpt(body)
        ));
    }
    let usage = parsed
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    ChatResponse {
        content,
        finish_reason,
        usage,
    }
}

#[derive(Debug, Serialize)]
pub struct WireEmbeddingRequest<'a> {
    pub model: &'a str,
    pub input: &'a str,
}

pub fn encode_embedding_request(model: &str, input: &str) -> String {
    serde_json::to_string(&WireEmbeddingRequest { model, input })
        .expect("embedding request serializes")
}

#[derive(Debug, Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Debug, Deserialize)]
struct WireEmbedding {
    embedding: Vec<f32>,
}

pub fn decode_embedding_response(body: &str) -> Result<Vec<f32>, String> {
    let parsed: WireEmbeddingResponse = serde_json::from_str(body)
        .map_err(|err| format!("malformed embedding body ({err}): {}", excerpt(body)))?;
    parsed
        .data
        .into_iter()
        .next()
        .map(|d| d.embedding)
        .ok_or_else(|| format!("embedding body has no data: {}", excerpt(body)))
}
