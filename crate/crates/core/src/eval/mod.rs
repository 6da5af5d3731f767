//! Datasets, per-example scorers and workflow-scaling metrics.

mod metrics;
mod scorer;

pub use metrics::{scaling_metrics, ScalingMetrics};
pub use scorer::{extract_choice, extract_numeric, token_f1, Scorer};

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::rng::stream;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub split: Split,
}

#[derive(Deserialize)]
struct RawExample {
    id: Value,
    question: String,
    answer: Value,
    #[serde(default)]
    split: Option<Split>,
}

fn value_to_string(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Reads a JSON-lines dataset. Records without a `"split"` field are split
/// 1:4 validation:test by a seeded shuffle.
pub fn load_dataset(path: impl AsRef<Path>, split_seed: u64) -> Result<Vec<TaskExample>, EvalError> {
    parse_dataset(&std::fs::read_to_string(path)?, split_seed)
}

pub fn parse_dataset(text: &str, split_seed: u64) -> Result<Vec<TaskExample>, EvalError> {
    let mut out = Vec::new();
    let mut unassigned = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(line)
            .map_err(|e| EvalError::Parse { line: n + 1, message: e.to_string() })?;
        let id = value_to_string(raw.id);
        if !seen.insert(id.clone()) {
            return Err(EvalError::DuplicateId(id));
        }
        if raw.split.is_none() {
            unassigned.push(out.len());
        }
        out.push(TaskExample {
            id,
            question: raw.question,
            answer: value_to_string(raw.answer),
            split: raw.split.unwrap_or(Split::Test),
        });
    }
    let n_validation = (unassigned.len() as f64 / 5.0).round() as usize;
    unassigned.shuffle(&mut stream(split_seed, &[0x5eed]));
    for &i in &unassigned[..n_validation] {
        out[i].split = Split::Validation;
    }
    Ok(out)
}

pub fn split_of(examples: &[TaskExample], split: Split) -> Vec<TaskExample> {
    examples.iter().filter(|e| e.split == split).cloned().collect()
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_fixture() {
        let text = r#"{"id":"a","question":"1+1?","answer":"2","split":"validation"}
{"id":2,"question":"2+2?","answer":4,"split":"test"}"#;
        let ex = parse_dataset(text, 0).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].id, "2");
        assert_eq!(ex[1].answer, "4");
        assert_eq!(ex[0].split, Split::Validation);
    }

    #[test]
    fn auto_split_is_one_to_four() {
        let text: String = (0..100)
            .map(|i| format!("{{\"id\":{i},\"question\":\"q\",\"answer\":\"a\"}}\n"))
            .collect();
        let ex = parse_dataset(&text, 7).unwrap();
        assert_eq!(split_of(&ex, Split::Validation).len(), 20);
        assert_eq!(split_of(&ex, Split::Test).len(), 80);
        let again = parse_dataset(&text, 7).unwrap();
        assert_eq!(ex, again);
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"id\":1,\"question\":\"q\",\"answer\":\"a\"}\n{\"id\":2,\"question\":\"q\",\"answer\":\"a\"}\n{not json\n";
        match parse_dataset(text, 0) {
            Err(EvalError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":1,\"question\":\"q\",\"answer\":\"a\"}\n{\"id\":\"1\",\"question\":\"q\",\"answer\":\"a\"}";
        assert!(matches!(parse_dataset(text, 0), Err(EvalError::DuplicateId(_))));
    }

    #[test]
    fn compensated_sum_is_exact_on_many_tenths() {
        let n = 1_000_000;
        let s = compensated_sum(std::iter::repeat_n(0.1, n));
        assert!((s / n as f64 - 0.1).abs() < 1e-12);
    }
}
