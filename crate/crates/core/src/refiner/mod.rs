//! Pool-level refinement operators.
//!
//! A refiner reads the round's scored complete workflows and emits `M` new
//! complete workflows one at a time; each proposal is scored and inserted
//! into the pool before the next one is generated.

mod epsilon;
mod softmax_edit;

pub use epsilon::{Perturbation, SyntheticEpsilonRefiner};
pub use softmax_edit::{
    edit_workflow, LlmEditor, SoftmaxEditRefiner, WorkflowEditor, DEFAULT_EDIT_TEMPLATE,
};

use std::collections::HashSet;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::smc::{PoolEntry, Provenance, SmcError};
use crate::workflow::{Workflow, WorkflowId};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("refinement pool is empty")]
    EmptyPool,
    #[error("edit failed: {0}")]
    EditFailed(String),
    #[error("invalid refiner setting: {0}")]
    InvalidSetting(String),
}

/// A pool member: a scored complete workflow plus the resampling weight of
/// the particle it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCandidate {
    pub entry: PoolEntry,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub workflow: Workflow,
    pub reward: f64,
    /// Candidate the proposal was derived from, if any.
    pub source: Option<WorkflowId>,
    /// True when the edit failed and the source was copied unchanged.
    pub passthrough: bool,
}

/// Scores a complete workflow (through the run's reward cache).
pub type ScoreFn<'a> = dyn FnMut(&Workflow) -> Result<f64, SmcError> + 'a;

pub trait Refiner: Send + Sync {
    /// Generates `m` proposals sequentially, appending each scored proposal
    /// to `pool` before generating the next.
    fn propose(
        &self,
        pool: &mut Vec<PoolCandidate>,
        m: usize,
        round: usize,
        rng: &mut dyn RngCore,
        score: &mut ScoreFn<'_>,
    ) -> Result<Vec<Proposal>, SmcError>;
}

/// The disabled refiner; always returns no proposals.
pub struct NoRefiner;

impl Refiner for NoRefiner {
    fn propose(
        &self,
        _pool: &mut Vec<PoolCandidate>,
        _m: usize,
        _round: usize,
        _rng: &mut dyn RngCore,
        _score: &mut ScoreFn<'_>,
    ) -> Result<Vec<Proposal>, SmcError> {
        Ok(Vec::new())
    }
}

/// Appends a scored proposal to the pool.
pub(crate) fn insert_proposal(pool: &mut Vec<PoolCandidate>, p: &Proposal, round: usize, weight: f64) {
    pool.push(PoolCandidate {
        entry: PoolEntry::new(p.workflow.clone(), p.reward, round, Provenance::Refinement),
        weight,
    });
}

/// Softmax of `scores / temperature`, computed with max subtraction.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices of the top-`c` distinct workflows by reward; ties go to the
/// earlier round, then the smaller id.
pub fn top_candidates(pool: &[PoolCandidate], c: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&pool[a].entry, &pool[b].entry);
        y.reward
            .total_cmp(&x.reward)
            .then(x.round.cmp(&y.round))
            .then_with(|| x.id.cmp(&y.id))
            .then(a.cmp(&b))
    });
    order.retain(|&i| seen.insert(pool[i].entry.id.clone()));
    order.truncate(c);
    order
}

/// Picks one pool index: restrict to the top-`c` candidates, then sample with
/// probability `softmax(reward / temperature)`.
pub fn select_candidate(
    pool: &[PoolCandidate],
    c: usize,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<usize, RefineError> {
    if pool.is_empty() {
        return Err(RefineError::EmptyPool);
    }
    if c == 0 || temperature.is_nan() || temperature <= 0.0 {
        return Err(RefineError::InvalidSetting(format!("top_c={c}, temperature={temperature}")));
    }
    let top = top_candidates(pool, c);
    let rewards: Vec<f64> = top.iter().map(|&i| pool[i].entry.reward).collect();
    let probs = softmax(&rewards, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(top[k]);
        }
    }
    Ok(*top.last().expect("top is non-empty"))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::stream;

    pub(crate) fn candidate(text: &str, reward: f64, round: usize) -> PoolCandidate {
        PoolCandidate {
            entry: PoolEntry::new(
                Workflow::from_texts([text], 1).unwrap(),
                reward,
                round,
                Provenance::Rollout,
            ),
            weight: 1.0,
        }
    }

    fn frequencies(pool: &[PoolCandidate], c: usize, tau: f64, draws: usize) -> Vec<f64> {
        let mut rng = stream(21, &[]);
        let mut counts = vec![0usize; pool.len()];
        for _ in 0..draws {
            counts[select_candidate(pool, c, tau, &mut rng).unwrap()] += 1;
        }
        counts.into_iter().map(|x| x as f64 / draws as f64).collect()
    }

    #[test]
    fn softmax_selection_matches_closed_form() {
        let pool = vec![candidate("a", 0.9, 1), candidate("b", 0.5, 1), candidate("c", 0.3, 1)];
        let z = 9f64.exp() + 5f64.exp() + 3f64.exp();
        let exact = [9f64.exp() / z, 5f64.exp() / z, 3f64.exp() / z];
        assert!((exact[0] - 0.9796).abs() < 1e-4);
        let f = frequencies(&pool, 3, 0.1, 100_000);
        for (got, want) in f.iter().zip(exact) {
            assert!((got - want).abs() < 0.005, "{f:?}");
        }
    }

    #[test]
    fn equal_rewards_are_uniform_over_top_c() {
        let pool: Vec<_> = ["a", "b", "c", "d"].iter().map(|t| candidate(t, 0.5, 1)).collect();
        let f = frequencies(&pool, 3, 0.1, 60_000);
        let picked: Vec<_> = f.iter().filter(|&&x| x > 0.0).collect();
        assert_eq!(picked.len(), 3);
        assert!(picked.iter().all(|&&x| (x - 1.0 / 3.0).abs() < 0.01), "{f:?}");
    }

    #[test]
    fn single_entry_pool() {
        let pool = vec![candidate("only", 0.1, 1)];
        assert_eq!(frequencies(&pool, 3, 0.1, 100), vec![1.0]);
        assert!(matches!(select_candidate(&[], 3, 0.1, &mut stream(0, &[])), Err(RefineError::EmptyPool)));
    }

    #[test]
    fn duplicates_count_once_in_top_c() {
        let pool = vec![
            candidate("a", 0.9, 1),
            candidate("a", 0.9, 1),
            candidate("b", 0.8, 1),
            candidate("c", 0.1, 2),
        ];
        assert_eq!(top_candidates(&pool, 3), vec![0, 2, 3]);
    }

    #[test]
    fn argmax_dominance_as_temperature_falls() {
        let rewards = [0.9, 0.5];
        assert!(softmax(&rewards, 0.1)[0] > 0.97);
        assert!(softmax(&rewards, 0.01)[0] > 0.999_999);
        let big = softmax(&[1.0, 0.0], 1e-4);
        assert!(big.iter().all(|p| p.is_finite()));
    }
}
