//! Sequential Monte Carlo search over step-annotated agentic workflows.
//!
//! Workflows are sampled from a tilted distribution `p(s) * exp(R(s))`,
//! where `p` is an autoregressive step prior (an LLM or a table) and `R` a
//! reward in [0, 1]. Prefixes are extended one step per round, weighted by
//! look-ahead rollouts, optionally augmented by a pool-level refiner, and
//! resampled.

pub mod checks;
pub mod commands;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod oracle;
pub mod prior;
pub mod refiner;
pub mod reward;
pub mod rng;
pub mod sandbox;
pub mod smc;
pub mod workflow;

pub use workflow::{parse_annotated, Step, Workflow, WorkflowError, WorkflowId, WorkflowKind};
