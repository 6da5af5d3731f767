//! Sequential Monte Carlo over workflow prefixes.

mod archive;
mod artifacts;
mod engine;
mod weights;

pub use archive::{Archive, PoolEntry, Provenance};
pub use artifacts::{read_archive, RoundStats, RunArtifacts};
pub use engine::{lookahead_weight, Particle, RoundOutput, RunResult, Smc};
pub use weights::{ess, normalize, normalize_log, resample, resample_indices, ResamplingScheme};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::PriorError;
use crate::refiner::RefineError;
use crate::reward::RewardError;

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("cannot normalise an empty pool")]
    EmptyPool,
    #[error("weight {0} is not strictly positive and finite")]
    NonPositiveWeight(f64),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("writing run artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialising run artifacts: {0}")]
    Json(#[from] serde_json::Error),
    #[error("round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<SmcError>,
    },
}

/// How a particle's resampling weight is formed from look-ahead values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Look-ahead value divided by the parent prefix's look-ahead value.
    /// Targets the tilted posterior exactly as N grows.
    #[default]
    Incremental,
    /// The raw look-ahead value, without dividing out the parent's.
    Lookahead,
}

/// Which complete workflows the refiner may select from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerPool {
    /// This round's rollouts plus proposals inserted so far.
    #[default]
    Round,
    /// Everything archived so far, plus this round's pool.
    Archive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Particles per round.
    #[serde(rename = "N")]
    pub n: usize,
    /// Look-ahead rollouts per particle.
    #[serde(rename = "K")]
    pub k: usize,
    /// Refiner proposals per round.
    #[serde(rename = "M")]
    pub m: usize,
    /// Step horizon; also the number of rounds.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub rollout_temperature: f64,
    pub edit_temperature: f64,
    pub resampling: ResamplingScheme,
    pub weighting: WeightScheme,
    pub refiner_pool: RefinerPool,
    /// Look-ahead worker threads; 0 uses rayon's default.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 10,
            k: 1,
            m: 10,
            horizon: 5,
            seed: 0,
            rollout_temperature: 0.8,
            edit_temperature: 0.0,
            resampling: ResamplingScheme::default(),
            weighting: WeightScheme::default(),
            refiner_pool: RefinerPool::default(),
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SmcError> {
        let bad = |what: &str| Err(SmcError::InvalidConfig(what.to_string()));
        if self.n == 0 {
            return bad("N must be at least 1");
        }
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if self.horizon == 0 {
            return bad("T must be at least 1");
        }
        if !(self.rollout_temperature >= 0.0 && self.edit_temperature >= 0.0) {
            return bad("temperatures must be non-negative");
        }
        Ok(())
    }
}
