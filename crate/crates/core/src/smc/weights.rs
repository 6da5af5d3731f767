//! Weight normalisation, effective sample size and resampling.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::SmcError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    /// N independent categorical draws.
    #[default]
    Multinomial,
    /// One uniform offset, N evenly spaced pointers.
    Systematic,
}

fn check_weights(weights: &[f64]) -> Result<(), SmcError> {
    if weights.is_empty() {
        return Err(SmcError::EmptyPool);
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(SmcError::NonPositiveWeight(w));
    }
    Ok(())
}

/// Normalises log-weights with max subtraction.
pub fn normalize_log(log_weights: &[f64]) -> Result<Vec<f64>, SmcError> {
    if log_weights.is_empty() {
        return Err(SmcError::EmptyPool);
    }
    if let Some(&lw) = log_weights.iter().find(|lw| lw.is_nan() || **lw == f64::INFINITY) {
        return Err(SmcError::NonPositiveWeight(lw.exp()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(SmcError::NonPositiveWeight(0.0));
    }
    let shifted: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|w| w / total).collect())
}

/// Normalises positive weights to a probability vector.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>, SmcError> {
    check_weights(weights)?;
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    normalize_log(&logs)
}

/// (Σw)² / Σw².
pub fn ess(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return 0.0;
    }
    sum * sum / sum_sq
}

/// Ancestor indices drawn from normalised `probabilities`.
pub fn resample_indices(
    probabilities: &[f64],
    n: usize,
    scheme: ResamplingScheme,
    rng: &mut dyn RngCore,
) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for p in probabilities {
        acc += p;
        cumulative.push(acc);
    }
    let last = probabilities.len() - 1;
    let locate = |u: f64| cumulative.partition_point(|&c| c <= u).min(last);
    match scheme {
        ResamplingScheme::Multinomial => (0..n).map(|_| locate(rng.random::<f64>() * acc)).collect(),
        ResamplingScheme::Systematic => {
            let offset: f64 = rng.random();
            (0..n).map(|j| locate((j as f64 + offset) / n as f64 * acc)).collect()
        }
    }
}

/// Draws `n` items with probability proportional to their weights.
pub fn resample<T: Clone>(
    pool: &[(T, f64)],
    n: usize,
    scheme: ResamplingScheme,
    rng: &mut dyn RngCore,
) -> Result<Vec<T>, SmcError> {
    let weights: Vec<f64> = pool.iter().map(|(_, w)| *w).collect();
    let probs = normalize(&weights)?;
    Ok(resample_indices(&probs, n, scheme, rng).into_iter().map(|i| pool[i].0.clone()).collect())
}
