//! Exact enumeration over small tabular instances.
//!
//! Distributions are dense vectors indexed by the mixed-radix encoding of a
//! trajectory's alphabet indices, first step most significant.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{PriorError, TabularPrior, TabularPriorSpec};
use crate::reward::{energy, RewardError, TabularReward, TabularRewardSpec};
use crate::workflow::Workflow;

/// Largest enumerable trajectory count.
pub const MAX_TRAJECTORIES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {0} trajectories, above the enumeration cap")]
    InstanceTooLarge(u128),
    #[error("prefix [{0}] has zero prior probability")]
    UnreachablePrefix(String),
    #[error("distribution puts mass on trajectory {0}, which the prior excludes")]
    SupportMismatch(usize),
    #[error("distribution has {found} entries, instance has {expected}")]
    LengthMismatch { found: usize, expected: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("instance io: {0}")]
    Io(#[from] std::io::Error),
    #[error("instance json: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk form: a tabular prior plus a reward table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub prior: TabularPriorSpec,
    pub reward: TabularRewardSpec,
}

impl InstanceSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self) -> Result<(TabularPrior, TabularReward), OracleError> {
        Ok((TabularPrior::from_spec(self.prior.clone())?, TabularReward::from_spec(self.reward.clone())?))
    }
}

#[derive(Debug, Clone)]
pub struct ExactInstance {
    prior: TabularPrior,
    reward: TabularReward,
    radix: usize,
    horizon: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    q: Vec<f64>,
    z: f64,
}

impl ExactInstance {
    pub fn new(prior: TabularPrior, reward: TabularReward) -> Result<Self, OracleError> {
        let radix = prior.alphabet().len();
        let horizon = crate::prior::PriorModel::horizon(&prior);
        let size = (radix as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
        if size > MAX_TRAJECTORIES as u128 {
            return Err(OracleError::InstanceTooLarge(size));
        }
        let size = size as usize;
        let mut p = Vec::with_capacity(size);
        let mut r = Vec::with_capacity(size);
        let mut symbols = vec![0usize; horizon];
        for idx in 0..size {
            decode_into(idx, radix, &mut symbols);
            p.push(prior.probability(&symbols));
            let texts: Vec<&str> = symbols.iter().map(|&s| prior.alphabet()[s].as_str()).collect();
            r.push(reward.lookup(&texts));
        }
        let tilted: Vec<f64> = p.iter().zip(&r).map(|(p, r)| p * energy(*r)).collect();
        let z = crate::eval::compensated_sum(tilted.iter().copied());
        let q = tilted.iter().map(|t| t / z).collect();
        Ok(Self { prior, reward, radix, horizon, p, r, q, z })
    }

    pub fn from_spec(spec: &InstanceSpec) -> Result<Self, OracleError> {
        let (p, r) = spec.build()?;
        Self::new(p, r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Self::from_spec(&InstanceSpec::load(path)?)
    }

    pub fn tabular_prior(&self) -> &TabularPrior {
        &self.prior
    }

    pub fn tabular_reward(&self) -> &TabularReward {
        &self.reward
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn prior(&self) -> &[f64] {
        &self.p
    }

    pub fn posterior(&self) -> &[f64] {
        &self.q
    }

    pub fn rewards(&self) -> &[f64] {
        &self.r
    }

    /// Normalising constant: sum of p(s) exp(R(s)).
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn index_of(&self, symbols: &[usize]) -> usize {
        symbols.iter().fold(0, |acc, &s| acc * self.radix + s)
    }

    pub fn symbols_of(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.horizon];
        decode_into(idx, self.radix, &mut out);
        out
    }

    pub fn workflow(&self, idx: usize) -> Workflow {
        self.prior.decode(&self.symbols_of(idx))
    }

    /// Index of a complete workflow, or `None` if it uses foreign steps.
    pub fn index_of_workflow(&self, w: &Workflow) -> Option<usize> {
        let symbols = self.prior.encode(w).ok()?;
        (symbols.len() == self.horizon).then(|| self.index_of(&symbols))
    }

    /// Sum over suffixes of p(suffix | prefix) exp(R(prefix, suffix)).
    pub fn lookahead_marginal(&self, prefix: &[usize]) -> Result<f64, OracleError> {
        if prefix.len() > self.horizon || self.prior.probability(prefix) == 0.0 {
            return Err(OracleError::UnreachablePrefix(key(prefix)));
        }
        let width = self.radix.pow((self.horizon - prefix.len()) as u32);
        let base = self.index_of(prefix) * width;
        let mut suffix = vec![0usize; self.horizon - prefix.len()];
        let terms = (0..width).map(|j| {
            decode_into(j, self.radix, &mut suffix);
            self.prior.conditional_probability(prefix, &suffix) * energy(self.r[base + j])
        });
        Ok(crate::eval::compensated_sum(terms.collect::<Vec<_>>()))
    }

    /// Empirical distribution of complete workflows; foreign ones are skipped.
    pub fn empirical<'w, I>(&self, workflows: I) -> Vec<f64>
    where
        I: IntoIterator<Item = &'w Workflow>,
    {
        let mut counts = vec![0.0; self.len()];
        let mut total = 0.0;
        for w in workflows {
            if let Some(i) = self.index_of_workflow(w) {
                counts[i] += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            counts.iter_mut().for_each(|c| *c /= total);
        }
        counts
    }

    /// Self-normalised estimate from prior samples weighted by exp(R).
    pub fn weighted_majority_estimate(&self, samples: &[usize]) -> Vec<f64> {
        let mut mass = vec![0.0; self.len()];
        for &i in samples {
            mass[i] += energy(self.r[i]);
        }
        let total: f64 = mass.iter().sum();
        if total > 0.0 {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        mass
    }

    pub fn expected_reward(&self, dist: &[f64]) -> f64 {
        dist.iter().zip(&self.r).map(|(d, r)| d * r).sum()
    }

    /// E_{dist}[R] - KL(dist || p).
    pub fn kl_objective(&self, dist: &[f64]) -> Result<f64, OracleError> {
        if dist.len() != self.len() {
            return Err(OracleError::LengthMismatch { found: dist.len(), expected: self.len() });
        }
        let mut total = 0.0;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if self.p[i] == 0.0 {
                return Err(OracleError::SupportMismatch(i));
            }
            total += d * (self.r[i] - (d / self.p[i]).ln());
        }
        Ok(total)
    }

    /// Writes `trajectory,prior,reward,posterior` rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "trajectory,prior,reward,posterior")?;
        for i in 0..self.len() {
            let steps: Vec<&str> =
                self.symbols_of(i).iter().map(|&s| self.prior.alphabet()[s].as_str()).collect();
            writeln!(out, "{},{},{},{}", steps.join(" "), self.p[i], self.r[i], self.q[i])?;
        }
        Ok(())
    }
}

fn decode_into(mut idx: usize, radix: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = idx % radix;
        idx /= radix;
    }
}

fn key(prefix: &[usize]) -> String {
    prefix.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Half the L1 distance.
pub fn tv_distance(d1: &[f64], d2: &[f64]) -> f64 {
    debug_assert_eq!(d1.len(), d2.len());
    0.5 * d1.iter().zip(d2).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
