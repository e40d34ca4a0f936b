//! Remote OpenAI-compatible backends over HTTPS.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::embedding::{EmbedError, Embedder, EmbeddingVector};
use super::wire;
use super::{ChatBackend, ChatRequest, ChatResponse};

pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport failure: {0}")]
    Io(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Io(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
        }
    }
}

/// POST a JSON body and return the response body.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
    ) -> Result<String, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, reqwest::Error> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
    ) -> Result<String, TransportError> {
        let mut builder = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|err| {
            if err.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Io(err.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|err| TransportError::Io(err.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(TransportError::Status {
                status: status.as_u16(),
                body: wire::excerpt(&text),
            })
        }
    }
}

#[derive(Clone)]
struct RetryPolicy {
    retries: u32,
    backoff: Duration,
}

impl RetryPolicy {
    fn run(
        &self,
        mut op: impl FnMut() -> Result<String, TransportError>,
    ) -> Result<String, TransportError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match op() {
                Ok(body) => return Ok(body),
                Err(err) if err.retryable() && attempt < self.retries => {
                    tracing::warn!(attempt, %err, "remote call failed, retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

pub struct OpenAiCompatBackend {
    base_url: String,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    calls: AtomicUsize,
}

impl fmt::Debug for OpenAiCompatBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiCompatBackend")
            .field("base_url", &self.base_url)
            .finish()
    }
}

impl OpenAiCompatBackend {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            transport,
            retry: RetryPolicy {
                retries: DEFAULT_RETRIES,
                backoff: DEFAULT_BACKOFF,
            },
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retry = RetryPolicy { retries, backoff };
        self
    }
}

impl ChatBackend for OpenAiCompatBackend {
    fn dispatch(&self, request: &ChatRequest) -> ChatResponse {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let url = join_url(&self.base_url, "chat/completions");
        let body = wire::encode_chat_request(request);
        match self.retry.run(|| {
            self.transport
                .post_json(&url, self.api_key.as_deref(), &body)
        }) {
            Ok(text) => wire::decode_chat_response(&text),
            Err(err) => {
                ChatResponse::error(format!("remote backend unavailable after retries: {err}"))
            }
        }
    }

    fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn describe(&self) -> String {
        format!("openai-compatible:{}", self.base_url)
    }
}

pub struct RemoteEmbedder {
    base_url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
}

impl RemoteEmbedder {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        dimension: usize,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            model: model.into(),
            dimension,
            transport,
            retry: RetryPolicy {
                retries: DEFAULT_RETRIES,
                backoff: DEFAULT_BACKOFF,
            },
        }
    }

    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retry = RetryPolicy { retries, backoff };
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let url = join_url(&self.base_url, "embeddings");
        let body = wire::encode_embedding_request(&self.model, text);
        let response = self
            .retry
            .run(|| {
                self.transport
                    .post_json(&url, self.api_key.as_deref(), &body)
            })
            .map_err(|err| EmbedError::Backend(err.to_string()))?;
        let values = wire::decode_embedding_response(&response).map_err(EmbedError::Backend)?;
        if values.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                found: values.len(),
            });
        }
        Ok(EmbeddingVector::new(values))
    }
}
