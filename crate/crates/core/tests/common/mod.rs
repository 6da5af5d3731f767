#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use flowsmc::gateway::{completion_body, FnTransport, TransportResponse};
use flowsmc::reward::{Evaluation, RewardError, RewardModel};
use flowsmc::Workflow;
use regex::Regex;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

const VARIANTS: [&str; 3] = ["plan", "solve", "verify"];

/// Deterministic stand-in for the meta-optimizer model. Replies depend only
/// on the request body, so identical requests get identical replies.
pub fn stub_llm(horizon: usize) -> FnTransport {
    let next = Regex::new(r"`# Step (\d+):`").unwrap();
    FnTransport::new(move |body: &Value| {
        let prompt = body["messages"].as_array().and_then(|m| m.last()).and_then(|m| m["content"].as_str()).unwrap_or("");
        let digest = Sha256::digest(body.to_string().as_bytes());
        let first: usize = next.captures(prompt).and_then(|c| c[1].parse().ok()).unwrap_or(1);
        let last = if prompt.contains("exactly one step") { first } else { horizon };
        let mut reply = String::new();
        for (j, n) in (first..=last).enumerate() {
            let v = VARIANTS[digest[j] as usize % VARIANTS.len()];
            reply.push_str(&format!("# Step {n}:\nx{n} = call_llm('{v}')\n"));
        }
        let prompt_tokens = (prompt.len() / 4) as u64;
        let completion_tokens = (reply.len() / 4) as u64;
        Ok(TransportResponse::ok(completion_body(&[reply.trim_end()], prompt_tokens, completion_tokens)))
    })
}

/// Fraction of real steps that call the `solve` variant.
pub struct KeywordReward;

impl RewardModel for KeywordReward {
    fn score(&self, w: &Workflow) -> Result<Evaluation, RewardError> {
        let real: Vec<&str> = w.texts().filter(|t| !t.is_empty()).collect();
        if real.is_empty() {
            return Ok(Evaluation::free(0.0));
        }
        let hits = real.iter().filter(|t| t.contains("'solve'")).count();
        Ok(Evaluation::free(hits as f64 / real.len() as f64))
    }
}

pub fn shared(t: FnTransport) -> Arc<FnTransport> {
    Arc::new(t)
}
