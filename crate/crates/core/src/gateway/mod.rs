//! Chat-completions client with retries, usage accounting and cassettes.
//!
//! [`Gateway::call_llm`] mirrors the `call_llm(messages, temperature,
//! num_of_response, agent_role, instructions)` helper that generated
//! workflows use: the role and instructions are folded into one system
//! message, the messages alternate user/assistant starting with user, and
//! exactly `num_of_response` texts come back.

mod cassette;
mod transport;

pub use cassette::{
    read_cassette, record_replay, request_digest, CassetteEntry, CassetteMode, RecordingTransport,
    ReplayTransport,
};
pub use transport::{
    completion_body, FnTransport, HttpTransport, Transport, TransportError, TransportResponse,
    COMPLETIONS_PATH, ENV_API_KEY, ENV_ENDPOINT,
};

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no cassette entry for request digest {0}")]
    CassetteMiss(String),
    #[error("cassette: {0}")]
    Cassette(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `call_llm` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<String>,
    pub temperature: f64,
    pub num_of_response: usize,
    pub agent_role: String,
    pub instructions: String,
    /// Overrides the gateway's default model when set.
    #[serde(default)]
    pub model: Option<String>,
    /// Overrides the gateway's default timeout when set.
    #[serde(skip)]
    pub timeout: Option<Duration>,
}

impl ChatRequest {
    pub fn new(messages: Vec<String>, temperature: f64, num_of_response: usize) -> Self {
        Self {
            messages,
            temperature,
            num_of_response,
            agent_role: String::new(),
            instructions: String::new(),
            model: None,
            timeout: None,
        }
    }

    pub fn role(mut self, role: impl Into<String>) -> Self {
        self.agent_role = role.into();
        self
    }

    pub fn instructions(mut self, instructions: impl Into<String>) -> Self {
        self.instructions = instructions.into();
        self
    }
}

/// System prompt: role preamble, then the instructions.
pub fn system_message(agent_role: &str, instructions: &str) -> String {
    let mut out = String::new();
    if !agent_role.is_empty() {
        out.push_str(&format!("You are a {agent_role}."));
    }
    if !instructions.is_empty() {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(instructions);
    }
    out
}

/// Wire body for `POST /v1/chat/completions`.
pub fn wire_body(req: &ChatRequest, model: &str) -> Value {
    let mut messages = Vec::with_capacity(req.messages.len() + 1);
    let system = system_message(&req.agent_role, &req.instructions);
    if !system.is_empty() {
        messages.push(json!({"role": "system", "content": system}));
    }
    for (i, m) in req.messages.iter().enumerate() {
        let role = if i % 2 == 0 { "user" } else { "assistant" };
        messages.push(json!({"role": role, "content": m}));
    }
    json!({
        "model": req.model.as_deref().unwrap_or(model),
        "messages": messages,
        "temperature": req.temperature,
        "n": req.num_of_response,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prices {
    /// Cost per prompt token.
    pub input: f64,
    /// Cost per completion token.
    pub output: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageSummary {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub requests: u64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    prices: Prices,
    summary: UsageSummary,
}

impl UsageLedger {
    pub fn new(prices: Prices) -> Self {
        Self { prices, summary: UsageSummary::default() }
    }

    pub fn record(&mut self, input_tokens: u64, output_tokens: u64) {
        self.summary.input_tokens += input_tokens;
        self.summary.output_tokens += output_tokens;
        self.summary.requests += 1;
        self.summary.total_cost +=
            input_tokens as f64 * self.prices.input + output_tokens as f64 * self.prices.output;
    }

    pub fn summary(&self) -> UsageSummary {
        self.summary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: usize,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based), jitter excluded.
    pub fn base_delay(&self, retry: usize) -> Duration {
        let factor = self.multiplier.powi(retry as i32);
        let ms = (self.initial_delay_ms as f64 * factor).min(self.max_delay_ms as f64);
        Duration::from_secs_f64(ms / 1000.0)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays instead of sleeping.
#[derive(Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().unwrap().push(d);
    }
}

struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub model: String,
    #[serde(default)]
    pub prices: Prices,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_in_flight() -> usize {
    8
}

impl GatewayConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            prices: Prices::default(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

pub struct Gateway {
    transport: Arc<dyn Transport>,
    config: GatewayConfig,
    ledger: Mutex<UsageLedger>,
    limiter: Limiter,
    sleeper: Arc<dyn Sleeper>,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, config: GatewayConfig) -> Self {
        Self {
            ledger: Mutex::new(UsageLedger::new(config.prices)),
            limiter: Limiter::new(config.max_in_flight),
            transport,
            config,
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Sends `req`, retrying 429/5xx and transport timeouts with exponential
    /// backoff, and returns exactly `num_of_response` completions.
    pub fn call_llm(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let body = wire_body(req, &self.config.model);
        let timeout = req.timeout.unwrap_or(Duration::from_secs_f64(self.config.timeout_secs));
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                self.sleeper.sleep(self.backoff(attempt - 1));
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.post(&body, timeout)
            };
            match outcome {
                Ok(resp) if resp.is_success() => {
                    let (texts, usage) = parse_completion(&resp.body, req.num_of_response)?;
                    self.ledger.lock().unwrap().record(usage.0, usage.1);
                    return Ok(texts);
                }
                Ok(resp) if resp.status == 429 || (500..600).contains(&resp.status) => {
                    log::warn!("chat completion attempt {} got HTTP {}", attempt + 1, resp.status);
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => return Err(GatewayError::Http { status: resp.status, body: resp.body }),
                Err(TransportError::CassetteMiss(d)) => return Err(GatewayError::CassetteMiss(d)),
                Err(e) if e.is_transient() => {
                    log::warn!("chat completion attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
                Err(e) => return Err(GatewayError::Transport(e.to_string())),
            }
        }
        Err(GatewayError::Exhausted { attempts, last })
    }

    pub fn usage_summary(&self) -> UsageSummary {
        self.ledger.lock().unwrap().summary()
    }

    fn backoff(&self, retry: usize) -> Duration {
        let base = self.config.retry.base_delay(retry);
        if self.config.retry.jitter {
            base.mul_f64(rand::rng().random_range(0.5..=1.0))
        } else {
            base
        }
    }
}

/// Extracts `choices[i].message.content` and `(prompt, completion)` tokens.
pub fn parse_completion(body: &str, expected: usize) -> Result<(Vec<String>, (u64, u64)), GatewayError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choices = v["choices"]
        .as_array()
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices".into()))?;
    if choices.len() != expected {
        return Err(GatewayError::MalformedResponse(format!(
            "asked for {expected} choices, got {}",
            choices.len()
        )));
    }
    let texts = choices
        .iter()
        .map(|c| {
            c["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| GatewayError::MalformedResponse("choice without content".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let usage = &v["usage"];
    let tokens = (
        usage["prompt_tokens"].as_u64().unwrap_or(0),
        usage["completion_tokens"].as_u64().unwrap_or(0),
    );
    Ok((texts, tokens))
}
