//! Terminal rewards R(s) in [0, 1] and their energies exp(R).

mod cache;
mod tabular;
mod validation;

pub use cache::{CachedReward, RewardCache, RewardRecord};
pub use tabular::{TabularReward, TabularRewardSpec};
pub use validation::{ExecError, ExecOutcome, ValidationReward, WorkflowExecutor};

use thiserror::Error;

use crate::workflow::Workflow;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("only complete workflows can be scored (got {len} of {horizon} steps)")]
    NotComplete { len: usize, horizon: usize },
    #[error("workflow could not be executed: {0}")]
    ExecutionFailed(String),
    #[error("reward {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid reward table: {0}")]
    InvalidTable(String),
    #[error("reward journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A single evaluation of a complete workflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    /// Executor-side spend for this evaluation, if any.
    pub cost: f64,
}

impl Evaluation {
    pub fn free(reward: f64) -> Self {
        Self { reward, cost: 0.0 }
    }
}

pub trait RewardModel: Send + Sync {
    fn score(&self, w: &Workflow) -> Result<Evaluation, RewardError>;
}

/// exp(r).
pub fn energy(reward: f64) -> f64 {
    reward.exp()
}

pub(crate) fn check_complete(w: &Workflow) -> Result<(), RewardError> {
    if w.is_complete() {
        Ok(())
    } else {
        Err(RewardError::NotComplete { len: w.len(), horizon: w.horizon() })
    }
}

pub(crate) fn check_range(r: f64) -> Result<f64, RewardError> {
    if (0.0..=1.0).contains(&r) {
        Ok(r)
    } else {
        Err(RewardError::OutOfRange(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// exp(x) by its Taylor series, summed until terms vanish.
    fn exp_series(x: f64) -> f64 {
        let (mut term, mut sum, mut n) = (1.0f64, 1.0f64, 1.0f64);
        while term.abs() > 1e-18 {
            term *= x / n;
            sum += term;
            n += 1.0;
        }
        sum
    }

    #[test]
    fn energy_values() {
        assert_eq!(energy(0.0), 1.0);
        assert!((energy(1.0) - std::f64::consts::E).abs() < 1e-12);
        assert!((energy(0.5) - exp_series(0.5)).abs() < 1e-12);
        assert!((energy(0.5) - 1.648_721_270_700_128).abs() < 1e-12);
    }

    #[test]
    fn energy_is_increasing_and_bounded() {
        let mut prev = 0.0;
        for i in 0..=1000 {
            let e = energy(i as f64 / 1000.0);
            assert!(e > prev);
            assert!((1.0..=std::f64::consts::E).contains(&e));
            prev = e;
        }
    }
}
