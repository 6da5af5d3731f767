use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::{check_complete, Evaluation, RewardError, RewardModel};
use crate::eval::{compensated_sum, Scorer, Split, TaskExample};
use crate::workflow::Workflow;

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub answer: String,
    pub cost: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    /// The workflow itself cannot run (syntax error, missing entry class).
    #[error("workflow is not executable: {0}")]
    Unexecutable(String),
    /// The workflow ran but failed or timed out on one example.
    #[error("example failed: {0}")]
    Example(String),
}

/// Runs a workflow on one task example.
pub trait WorkflowExecutor: Send + Sync {
    fn run(&self, w: &Workflow, example: &TaskExample) -> Result<ExecOutcome, ExecError>;
}

/// Validation accuracy: the mean per-example score over the validation split.
pub struct ValidationReward {
    examples: Vec<TaskExample>,
    executor: Arc<dyn WorkflowExecutor>,
    scorer: Scorer,
    parallel: bool,
}

impl ValidationReward {
    /// Keeps only validation examples, ordered by id so the reduction order
    /// is fixed.
    pub fn new(examples: &[TaskExample], executor: Arc<dyn WorkflowExecutor>, scorer: Scorer) -> Self {
        let mut examples: Vec<TaskExample> =
            examples.iter().filter(|e| e.split == Split::Validation).cloned().collect();
        examples.sort_by(|a, b| a.id.cmp(&b.id));
        Self { examples, executor, scorer, parallel: true }
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn examples(&self) -> &[TaskExample] {
        &self.examples
    }

    fn run_one(&self, w: &Workflow, ex: &TaskExample) -> Result<(f64, f64), RewardError> {
        match self.executor.run(w, ex) {
            Ok(out) => Ok((self.scorer.score(&out.answer, &ex.answer), out.cost)),
            Err(ExecError::Example(msg)) => {
                log::debug!("example {} failed: {msg}", ex.id);
                Ok((0.0, 0.0))
            }
            Err(ExecError::Unexecutable(msg)) => Err(RewardError::ExecutionFailed(msg)),
        }
    }
}

impl RewardModel for ValidationReward {
    fn score(&self, w: &Workflow) -> Result<Evaluation, RewardError> {
        check_complete(w)?;
        if self.examples.is_empty() {
            return Err(RewardError::InvalidTable("no validation examples".into()));
        }
        let per_example: Vec<(f64, f64)> = if self.parallel {
            self.examples.par_iter().map(|ex| self.run_one(w, ex)).collect::<Result<_, _>>()?
        } else {
            self.examples.iter().map(|ex| self.run_one(w, ex)).collect::<Result<_, _>>()?
        };
        let total = compensated_sum(per_example.iter().map(|p| p.0));
        let cost = compensated_sum(per_example.iter().map(|p| p.1));
        Ok(Evaluation { reward: total / self.examples.len() as f64, cost })
    }
}
