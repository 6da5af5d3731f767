use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Env var holding the endpoint base URL (e.g. `http://localhost:8000`).
pub const ENV_ENDPOINT: &str = "FLOWSMC_LLM_ENDPOINT";
/// Env var holding the bearer API key.
pub const ENV_API_KEY: &str = "FLOWSMC_LLM_API_KEY";

pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

impl TransportResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into() }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("no cassette entry for request digest {0}")]
    CassetteMiss(String),
    #[error("{0}")]
    Other(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Timeout | Self::Connect(_))
    }
}

/// Sends one chat-completions request body and returns the raw response.
pub trait Transport: Send + Sync {
    fn post(&self, body: &Value, timeout: Duration) -> Result<TransportResponse, TransportError>;
}

/// Blocking HTTP transport for an OpenAI-compatible endpoint.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let url = format!("{}{}", base_url.trim_end_matches('/'), COMPLETIONS_PATH);
        Ok(Self { client, url, api_key })
    }

    pub fn from_env() -> Result<Self, TransportError> {
        let base = std::env::var(ENV_ENDPOINT)
            .map_err(|_| TransportError::Other(format!("{ENV_ENDPOINT} is not set")))?;
        Self::new(&base, std::env::var(ENV_API_KEY).ok())
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &Value, timeout: Duration) -> Result<TransportResponse, TransportError> {
        let mut req = self.client.post(&self.url).json(body).timeout(timeout);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        Ok(TransportResponse { status, body })
    }
}

type Handler = dyn Fn(&Value) -> Result<TransportResponse, TransportError> + Send + Sync;

/// In-process transport backed by a closure; keeps a transcript of every
/// request body it receives.
pub struct FnTransport {
    handler: Box<Handler>,
    transcript: Mutex<Vec<Value>>,
}

impl FnTransport {
    pub fn new<F>(handler: F) -> Self
    where
        F: Fn(&Value) -> Result<TransportResponse, TransportError> + Send + Sync + 'static,
    {
        Self { handler: Box::new(handler), transcript: Mutex::new(Vec::new()) }
    }

    /// Serves `outcomes` in order, then fails every further request.
    pub fn scripted(outcomes: Vec<Result<TransportResponse, TransportError>>) -> Self {
        let queue = Mutex::new(std::collections::VecDeque::from(outcomes));
        Self::new(move |_| {
            queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(TransportError::Other("script exhausted".into())))
        })
    }

    pub fn transcript(&self) -> Vec<Value> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.transcript.lock().unwrap().len()
    }
}

impl Transport for FnTransport {
    fn post(&self, body: &Value, _timeout: Duration) -> Result<TransportResponse, TransportError> {
        self.transcript.lock().unwrap().push(body.clone());
        (self.handler)(body)
    }
}

/// Builds an OpenAI-style completion body with the given choices and usage.
pub fn completion_body(contents: &[&str], prompt_tokens: u64, completion_tokens: u64) -> String {
    let choices: Vec<Value> = contents
        .iter()
        .enumerate()
        .map(|(i, c)| {
            serde_json::json!({
                "index": i,
                "message": {"role": "assistant", "content": c},
                "finish_reason": "stop"
            })
        })
        .collect();
    serde_json::json!({
        "object": "chat.completion",
        "choices": choices,
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens}
    })
    .to_string()
}
