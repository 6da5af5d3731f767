//! Autoregressive step priors.

mod llm;
mod tabular;

pub use llm::{LlmPrior, LlmPriorConfig, WorkflowCheck, NO_TRY_EXCEPT, STEP_FORMAT_RULES};
pub(crate) use llm::correction_prompt as llm_correction_prompt;
pub use tabular::{TabularPrior, TabularPriorSpec};

use rand::RngCore;
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::workflow::{Step, Workflow, WorkflowError};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("prefix of length {len} is already at horizon {horizon}")]
    PrefixComplete { len: usize, horizon: usize },
    #[error("prefix horizon {found} does not match prior horizon {expected}")]
    HorizonMismatch { found: usize, expected: usize },
    #[error("no table row for context [{0}]")]
    MissingContext(String),
    #[error("step {0:?} is not in the prior's alphabet")]
    UnknownStep(String),
    #[error("invalid prior table: {0}")]
    InvalidTable(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("self-correction exhausted after {attempts} attempts: {last_error}")]
    SelfCorrectionExhausted { attempts: usize, last_error: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("reading prior: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing prior: {0}")]
    Json(#[from] serde_json::Error),
}

/// p(s_t | s_{1:t-1}) over step chunks.
///
/// Implementations are shared across look-ahead workers, so they must be
/// usable from many threads at once.
pub trait PriorModel: Send + Sync {
    fn horizon(&self) -> usize;

    /// Draws the next step for `prefix`.
    fn extend_one(&self, prefix: &Workflow, rng: &mut dyn RngCore) -> Result<Step, PriorError>;

    /// Completes `prefix` to the horizon, keeping the prefix verbatim. A
    /// complete prefix comes back unchanged.
    fn rollout(&self, prefix: &Workflow, rng: &mut dyn RngCore) -> Result<Workflow, PriorError> {
        let mut out = prefix.clone();
        while !out.is_complete() {
            let step = self.extend_one(&out, rng)?;
            out.push(step.text)?;
        }
        Ok(out)
    }
}

pub(crate) fn check_extendable(prefix: &Workflow, horizon: usize) -> Result<(), PriorError> {
    if prefix.horizon() != horizon {
        return Err(PriorError::HorizonMismatch { found: prefix.horizon(), expected: horizon });
    }
    if prefix.is_complete() {
        return Err(PriorError::PrefixComplete { len: prefix.len(), horizon });
    }
    Ok(())
}
