use rand::{Rng, RngCore};

use super::{insert_proposal, PoolCandidate, Proposal, RefineError, Refiner, ScoreFn};
use crate::smc::SmcError;
use crate::workflow::Workflow;

/// What the refiner emits on its ε branch.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Always the same workflow.
    Fixed(Workflow),
    /// Uniformly one of these.
    Uniform(Vec<Workflow>),
}

impl Perturbation {
    fn draw(&self, rng: &mut dyn RngCore) -> Result<Workflow, RefineError> {
        match self {
            Perturbation::Fixed(w) => Ok(w.clone()),
            Perturbation::Uniform(ws) if ws.is_empty() => {
                Err(RefineError::InvalidSetting("empty perturbation set".into()))
            }
            Perturbation::Uniform(ws) => Ok(ws[rng.random_range(0..ws.len())].clone()),
        }
    }
}

/// Synthetic refiner for robustness checks.
///
/// With probability `1 - epsilon` it copies a pool entry drawn with
/// probability proportional to `weight * exp(-reward)`; once the engine
/// reweights the copy by `exp(reward)`, the selection bias cancels and the
/// particle distribution is left unchanged in expectation. With probability
/// `epsilon` it emits a workflow from `perturbation` instead.
pub struct SyntheticEpsilonRefiner {
    epsilon: f64,
    perturbation: Perturbation,
}

impl SyntheticEpsilonRefiner {
    pub fn new(epsilon: f64, perturbation: Perturbation) -> Result<Self, RefineError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(RefineError::InvalidSetting(format!("epsilon={epsilon}")));
        }
        Ok(Self { epsilon, perturbation })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Cumulative selection mass, proportional to `weight * exp(-reward)`.
fn neutral_cdf(pool: &[PoolCandidate]) -> Result<Vec<f64>, RefineError> {
    if pool.is_empty() {
        return Err(RefineError::EmptyPool);
    }
    let mut acc = 0.0;
    Ok(pool
        .iter()
        .map(|c| {
            acc += c.weight * (-c.entry.reward).exp();
            acc
        })
        .collect())
}

fn draw(cdf: &[f64], rng: &mut dyn RngCore) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl Refiner for SyntheticEpsilonRefiner {
    fn propose(
        &self,
        pool: &mut Vec<PoolCandidate>,
        m: usize,
        round: usize,
        rng: &mut dyn RngCore,
        score: &mut ScoreFn<'_>,
    ) -> Result<Vec<Proposal>, SmcError> {
        // Selection is from the round's original pool so that copies of copies
        // do not compound.
        let base = pool.len();
        let mean_weight = pool.iter().map(|c| c.weight).sum::<f64>() / base.max(1) as f64;
        let cdf = if m > 0 && self.epsilon < 1.0 { neutral_cdf(pool)? } else { Vec::new() };
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let perturb = self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon;
            let (workflow, source, weight) = if perturb {
                (self.perturbation.draw(rng)?, None, mean_weight)
            } else {
                let i = draw(&cdf, rng);
                (pool[i].entry.workflow.clone(), Some(pool[i].entry.id.clone()), pool[i].weight)
            };
            let reward = score(&workflow)?;
            let proposal = Proposal { workflow, reward, source, passthrough: false };
            insert_proposal(pool, &proposal, round, weight);
            out.push(proposal);
        }
        Ok(out)
    }
}
