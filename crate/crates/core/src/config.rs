//! The single JSON document that drives a `search` run.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{load_dataset, EvalError, Scorer};
use crate::gateway::{record_replay, CassetteMode, Gateway, GatewayConfig, GatewayError, HttpTransport, Transport};
use crate::oracle::{InstanceSpec, OracleError};
use crate::prior::{LlmPrior, LlmPriorConfig, PriorError, PriorModel, TabularPrior};
use crate::refiner::{
    LlmEditor, NoRefiner, Perturbation, RefineError, Refiner, SoftmaxEditRefiner, SyntheticEpsilonRefiner,
};
use crate::reward::{RewardError, RewardModel, TabularReward, ValidationReward};
use crate::sandbox::{SandboxError, SandboxPool, WorkerSpec};
use crate::smc::{RunConfig, SmcError};
use crate::workflow::Workflow;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Run(#[from] SmcError),
    #[error(transparent)]
    Instance(#[from] OracleError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dataset(#[from] EvalError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSelector {
    /// The `prior` half of an instance file.
    Tabular { instance: PathBuf },
    Llm(LlmPriorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSelector {
    /// The `reward` half of an instance file.
    Tabular { instance: PathBuf },
    Validation {
        dataset: PathBuf,
        #[serde(default)]
        split_seed: u64,
        scorer: Scorer,
        /// Worker command line, e.g. `["python3", "-m", "sandbox"]`.
        worker: Vec<String>,
        #[serde(default = "default_time_limit")]
        time_limit_secs: f64,
        #[serde(default = "default_pool")]
        pool: usize,
    },
}

fn default_time_limit() -> f64 {
    60.0
}

fn default_pool() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefinerSelector {
    #[default]
    None,
    SoftmaxEdit {
        #[serde(default = "default_top_c")]
        top_c: usize,
        #[serde(default = "default_softmax_temperature")]
        temperature: f64,
        /// Edit-prompt template file; the built-in one when absent.
        #[serde(default)]
        template: Option<PathBuf>,
    },
    Epsilon {
        epsilon: f64,
        /// Replacement workflows as step lists, drawn uniformly.
        perturbations: Vec<Vec<String>>,
    },
}

fn default_top_c() -> usize {
    3
}

fn default_softmax_temperature() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteSettings {
    pub mode: CassetteMode,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySettings {
    #[serde(flatten)]
    pub config: GatewayConfig,
    /// Overrides the endpoint environment variable.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cassette: Option<CassetteSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub prior: PriorSelector,
    pub reward: RewardSelector,
    #[serde(default)]
    pub refiner: RefinerSelector,
    #[serde(default)]
    pub gateway: Option<GatewaySettings>,
}

impl SearchConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.prior {
            PriorSelector::Tabular { instance } => fix(instance),
            PriorSelector::Llm(_) => {}
        }
        match &mut self.reward {
            RewardSelector::Tabular { instance } => fix(instance),
            RewardSelector::Validation { dataset, .. } => fix(dataset),
        }
        if let RefinerSelector::SoftmaxEdit { template: Some(t), .. } = &mut self.refiner {
            fix(t);
        }
        if let Some(c) = self.gateway.as_mut().and_then(|g| g.cassette.as_mut()) {
            fix(&mut c.path);
        }
    }

    /// Checks everything that can be checked without doing work.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate()?;
        let needs_gateway = matches!(self.prior, PriorSelector::Llm(_))
            || matches!(self.refiner, RefinerSelector::SoftmaxEdit { .. });
        if needs_gateway && self.gateway.is_none() {
            return Err(ConfigError::Invalid("an LLM prior or edit refiner needs a \"gateway\" section".into()));
        }
        if let PriorSelector::Llm(p) = &self.prior {
            if p.horizon != self.run.horizon {
                return Err(ConfigError::Invalid(format!(
                    "prior horizon {} differs from T = {}",
                    p.horizon, self.run.horizon
                )));
            }
        }
        match &self.refiner {
            RefinerSelector::None if self.run.m > 0 => {
                Err(ConfigError::Invalid("M > 0 needs a refiner".into()))
            }
            RefinerSelector::SoftmaxEdit { top_c, temperature, .. } if *top_c == 0 || temperature.is_nan() || *temperature <= 0.0 => {
                Err(ConfigError::Invalid("softmax_edit needs top_c >= 1 and temperature > 0".into()))
            }
            RefinerSelector::Epsilon { epsilon, .. } if !(0.0..=1.0).contains(epsilon) => {
                Err(ConfigError::Invalid("epsilon must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Live components built from a config.
pub struct Components {
    pub prior: Box<dyn PriorModel>,
    pub reward: Box<dyn RewardModel>,
    pub refiner: Box<dyn Refiner>,
    pub gateway: Option<Arc<Gateway>>,
}

impl Components {
    pub fn build(cfg: &SearchConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let gateway = cfg.gateway.as_ref().map(build_gateway).transpose()?;
        let need_gateway = || gateway.clone().ok_or_else(|| ConfigError::Invalid("missing gateway".into()));

        let prior: Box<dyn PriorModel> = match &cfg.prior {
            PriorSelector::Tabular { instance } => {
                Box::new(TabularPrior::from_spec(InstanceSpec::load(instance)?.prior)?)
            }
            PriorSelector::Llm(p) => {
                // The run-level rollout temperature is authoritative.
                let p = LlmPriorConfig { rollout_temperature: cfg.run.rollout_temperature, ..p.clone() };
                Box::new(LlmPrior::new(need_gateway()?, p))
            }
        };
        let reward: Box<dyn RewardModel> = match &cfg.reward {
            RewardSelector::Tabular { instance } => {
                Box::new(TabularReward::from_spec(InstanceSpec::load(instance)?.reward)?)
            }
            RewardSelector::Validation { dataset, split_seed, scorer, worker, time_limit_secs, pool } => {
                let examples = load_dataset(dataset, *split_seed)?;
                let mut spec = WorkerSpec::new(worker.clone());
                spec.time_limit = Duration::from_secs_f64(*time_limit_secs);
                let pool = Arc::new(SandboxPool::spawn(spec, *pool)?);
                Box::new(ValidationReward::new(&examples, pool, *scorer))
            }
        };
        let refiner: Box<dyn Refiner> = match &cfg.refiner {
            RefinerSelector::None => Box::new(NoRefiner),
            RefinerSelector::SoftmaxEdit { top_c, temperature, template } => {
                let mut editor = LlmEditor::new(need_gateway()?, cfg.run.edit_temperature);
                if let Some(path) = template {
                    let text = std::fs::read_to_string(path)
                        .map_err(|source| ConfigError::Read { path: path.clone(), source })?;
                    editor = editor.with_template(text);
                }
                Box::new(SoftmaxEditRefiner::new(Arc::new(editor), *top_c, *temperature)?)
            }
            RefinerSelector::Epsilon { epsilon, perturbations } => {
                let ws = perturbations
                    .iter()
                    .map(|steps| Workflow::from_texts(steps, cfg.run.horizon).map(Workflow::padded))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::Invalid(format!("perturbation: {e}")))?;
                Box::new(SyntheticEpsilonRefiner::new(*epsilon, Perturbation::Uniform(ws))?)
            }
        };
        Ok(Self { prior, reward, refiner, gateway })
    }
}

fn build_gateway(g: &GatewaySettings) -> Result<Arc<Gateway>, ConfigError> {
    let upstream = || -> Result<Arc<dyn Transport>, ConfigError> {
        let http = match &g.endpoint {
            Some(url) => HttpTransport::new(url, std::env::var(crate::gateway::ENV_API_KEY).ok()),
            None => HttpTransport::from_env(),
        }
        .map_err(|e| ConfigError::Gateway(GatewayError::Transport(e.to_string())))?;
        Ok(Arc::new(http))
    };
    let transport: Arc<dyn Transport> = match &g.cassette {
        Some(CassetteSettings { mode: CassetteMode::Replay, path }) => record_replay(CassetteMode::Replay, path, None)?,
        Some(CassetteSettings { mode: CassetteMode::Record, path }) => {
            record_replay(CassetteMode::Record, path, Some(upstream()?))?
        }
        None => upstream()?,
    };
    Ok(Arc::new(Gateway::new(transport, g.config.clone())))
}
