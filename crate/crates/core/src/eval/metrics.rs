use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Scorer};

/// Best@L, Mean@L and Majority@L over E examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingMetrics {
    pub best: f64,
    pub mean: f64,
    pub majority: f64,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "E")]
    pub e: usize,
}

/// `answers[e][l]` is workflow `l`'s answer on example `e`.
///
/// An example counts for Best@L when any answer is correct; Mean@L averages
/// the fraction correct; Majority@L takes the most frequent answer string,
/// and a tie for the top count is scored as incorrect.
pub fn scaling_metrics<S: AsRef<str>>(
    answers: &[Vec<S>],
    gold: &[S],
    scorer: Scorer,
) -> Result<ScalingMetrics, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::ShapeMismatch("no examples".into()));
    }
    if answers.len() != gold.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} answer rows for {} gold answers",
            answers.len(),
            gold.len()
        )));
    }
    let l = answers[0].len();
    if l == 0 {
        return Err(EvalError::ShapeMismatch("no workflows per example".into()));
    }
    if let Some((i, row)) = answers.iter().enumerate().find(|(_, r)| r.len() != l) {
        return Err(EvalError::ShapeMismatch(format!("row {i} has {} answers, expected {l}", row.len())));
    }
    let e = answers.len();
    let (mut best, mut mean, mut majority) = (0usize, 0.0f64, 0usize);
    for (row, g) in answers.iter().zip(gold) {
        let correct = row.iter().filter(|a| scorer.is_correct(a.as_ref(), g.as_ref())).count();
        if correct > 0 {
            best += 1;
        }
        mean += correct as f64 / l as f64;
        if let Some(mode) = unique_mode(row) {
            if scorer.is_correct(mode, g.as_ref()) {
                majority += 1;
            }
        }
    }
    Ok(ScalingMetrics {
        best: best as f64 / e as f64,
        mean: mean / e as f64,
        majority: majority as f64 / e as f64,
        l,
        e,
    })
}

fn unique_mode<S: AsRef<str>>(row: &[S]) -> Option<&str> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in row {
        *counts.entry(a.as_ref().trim()).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let mut modes = counts.iter().filter(|(_, &c)| c == top);
    let (answer, _) = modes.next()?;
    if modes.next().is_some() {
        None
    } else {
        Some(answer)
    }
}
