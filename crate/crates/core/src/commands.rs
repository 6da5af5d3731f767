//! Implementations behind the command-line subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::checks::{self, mean, nondecreasing, sampling_slack};
use crate::config::{Components, ConfigError, SearchConfig};
use crate::eval::{scaling_metrics, EvalError, ScalingMetrics, Scorer};
use crate::gateway::UsageSummary;
use crate::oracle::{ExactInstance, OracleError};
use crate::reward::{RewardCache, RewardError};
use crate::smc::{read_archive, RoundStats, RunArtifacts, Smc, SmcError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Run(#[from] SmcError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0} check(s) failed")]
    Criteria(usize),
}

impl CommandError {
    /// 1 for failed checks and runtime failures, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) | CommandError::Config(_) | CommandError::Json(_) => 2,
            CommandError::Eval(EvalError::ShapeMismatch(_) | EvalError::Parse { .. } | EvalError::DuplicateId(_)) => 2,
            CommandError::Oracle(OracleError::InstanceTooLarge(_) | OracleError::Json(_) | OracleError::Io(_)) => 2,
            CommandError::Run(SmcError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub best_id: String,
    pub best_reward: f64,
    pub best_round: usize,
    pub archive_size: usize,
    pub evaluations: usize,
    pub usage: Option<UsageSummary>,
}

/// Runs one search and writes artifacts to `out`.
pub fn search(
    config: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    out: &Path,
) -> Result<SearchSummary, CommandError> {
    let mut cfg = SearchConfig::load(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(w) = workers {
        cfg.run.workers = w;
    }
    cfg.validate()?;
    let parts = Components::build(&cfg)?;
    let artifacts = RunArtifacts::create(out, &cfg)?;
    let cache = Arc::new(RewardCache::with_journal(out.join("rewards.jsonl"))?);
    let mut smc = Smc::new(cfg.run.clone(), parts.prior.as_ref(), parts.reward.as_ref(), parts.refiner.as_ref())?
        .with_cache(cache.clone())
        .with_artifacts(artifacts);
    let result = smc.run();
    let usage = parts.gateway.as_ref().map(|g| g.usage_summary());
    if let Some(u) = &usage {
        fs::write(out.join("usage.json"), serde_json::to_string_pretty(u)? + "\n")?;
    }
    let result = result?;
    Ok(SearchSummary {
        best_id: result.best.id.to_string(),
        best_reward: result.best.reward,
        best_round: result.best.round,
        archive_size: result.archive.len(),
        evaluations: cache.evaluations(),
        usage,
    })
}

#[derive(Debug, Clone)]
pub struct OracleCheckParams {
    pub n: usize,
    /// Smaller population for the improvement-with-N comparison.
    pub n_small: usize,
    pub k: usize,
    pub seeds: usize,
    pub seed: u64,
    pub workers: usize,
    pub epsilons: Vec<f64>,
    /// Seeds per ε value.
    pub epsilon_seeds: usize,
}

impl Default for OracleCheckParams {
    fn default() -> Self {
        Self { n: 5000, n_small: 500, k: 3, seeds: 20, seed: 0, workers: 1, epsilons: vec![0.0, 0.1, 0.2], epsilon_seeds: 5 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn line(name: &str, passed: bool, detail: String) -> CheckLine {
    CheckLine { name: name.to_string(), passed, detail }
}

#[derive(Serialize)]
struct SeededRound<'a> {
    seed: u64,
    #[serde(flatten)]
    stats: &'a RoundStats,
}

/// Runs the sampler against the exact posterior of `instance`.
pub fn oracle_check(instance: &Path, params: &OracleCheckParams, out: &Path) -> Result<Vec<CheckLine>, CommandError> {
    let inst = ExactInstance::load(instance)?;
    fs::create_dir_all(out)?;
    inst.write_csv(fs::File::create(out.join("posterior.csv"))?)?;
    let q = inst.posterior();
    let e_p = inst.expected_reward(inst.prior());
    let e_q = inst.expected_reward(q);

    let big = checks::convergence_sweep(&inst, params.n, params.k, params.seed, params.seeds, params.workers)?;
    let small = checks::convergence_sweep(&inst, params.n_small, params.k, params.seed, params.seeds, params.workers)?;
    let mut rounds = String::new();
    for run in &big {
        for stats in &run.rounds {
            rounds.push_str(&serde_json::to_string(&SeededRound { seed: run.seed, stats })?);
            rounds.push('\n');
        }
    }
    fs::write(out.join("rounds.jsonl"), rounds)?;

    let tv_big = mean(big.iter().map(|r| r.tv));
    let tv_small = mean(small.iter().map(|r| r.tv));
    let mut lines = vec![
        line(
            "convergence",
            tv_big < 0.05 && tv_big < tv_small,
            format!("mean TV {tv_big:.4} at N={} (< 0.05), {tv_small:.4} at N={}", params.n, params.n_small),
        ),
    ];
    let lifted = big.iter().filter(|r| r.mean_reward >= e_p - 0.01).count();
    let avg_reward = mean(big.iter().map(|r| r.mean_reward));
    lines.push(line(
        "reward lift",
        lifted * 20 >= params.seeds * 19 && avg_reward >= e_q - 0.03,
        format!("{lifted}/{} seeds >= E_p[R]-0.01 = {:.4}; mean {avg_reward:.4} vs E_q[R] {e_q:.4}", params.seeds, e_p - 0.01),
    ));
    let monotone = big.iter().filter(|r| nondecreasing(&r.rounds)).count();
    lines.push(line(
        "round means",
        monotone * 10 >= params.seeds * 9,
        format!("{monotone}/{} seeds with nondecreasing per-round mean reward", params.seeds),
    ));
    let slack = sampling_slack(q, params.n);
    let horizon = inst.horizon() as f64;
    for &eps in &params.epsilons {
        let runs = checks::epsilon_sweep(&inst, eps, params.n, params.k, params.seed, params.epsilon_seeds, params.workers)?;
        let tv = mean(runs.iter().map(|r| r.tv));
        let bound = (horizon - 1.0) * eps + slack;
        lines.push(line(
            &format!("drift eps={eps}"),
            tv <= bound,
            format!("mean TV {tv:.4} <= {bound:.4}"),
        ));
    }
    Ok(lines)
}

/// Reads answers (`[[..], ..]`, E rows) and gold answers (`[..]`); either
/// file may also be JSON lines.
pub fn metrics(
    answers: &Path,
    gold: &Path,
    l: Option<usize>,
    scorer: Scorer,
    out: Option<&Path>,
) -> Result<ScalingMetrics, CommandError> {
    let mut rows: Vec<Vec<String>> = read_json_values(answers)?
        .into_iter()
        .map(|v| serde_json::from_value::<Vec<serde_json::Value>>(v).map(|r| r.into_iter().map(stringify).collect()))
        .collect::<Result<_, _>>()?;
    let gold: Vec<String> = read_json_values(gold)?.into_iter().map(stringify).collect();
    if let Some(l) = l {
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() < l {
                return Err(EvalError::ShapeMismatch(format!("row {i} has {} answers, L = {l}", row.len())).into());
            }
            row.truncate(l);
        }
    }
    let m = scaling_metrics(&rows, &gold, scorer)?;
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
    }
    Ok(m)
}

fn stringify(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// A whole-file JSON array, or one JSON value per line.
fn read_json_values(path: &Path) -> Result<Vec<serde_json::Value>, CommandError> {
    let text = fs::read_to_string(path)?;
    if let Ok(serde_json::Value::Array(items)) = serde_json::from_str(&text) {
        return Ok(items);
    }
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(l).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Summarises a run directory and writes `rounds.csv` next to it.
pub fn report(run: &Path) -> Result<String, CommandError> {
    let archive = read_archive(run.join("archive.jsonl"))?;
    let mut rounds = Vec::new();
    for l in fs::read(run.join("rounds.jsonl"))?.lines() {
        let l = l?;
        if !l.trim().is_empty() {
            rounds.push(serde_json::from_str::<RoundStats>(&l)?);
        }
    }
    let mut csv = String::from("round,n,pool,ess,min_reward,mean_reward,max_reward,lookahead_ratio\n");
    for r in &rounds {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.round, r.n, r.pool, r.ess, r.min_reward, r.mean_reward, r.max_reward, r.lookahead_ratio
        )
        .unwrap();
    }
    fs::write(run.join("rounds.csv"), &csv)?;

    let mut text = String::new();
    writeln!(text, "archive: {} distinct workflows", archive.len()).unwrap();
    let best = archive.iter().max_by(|a, b| {
        a.reward.total_cmp(&b.reward).then(b.round.cmp(&a.round)).then_with(|| b.id.cmp(&a.id))
    });
    if let Some(b) = best {
        writeln!(text, "best: reward {:.4}, round {}, id {}", b.reward, b.round, b.id).unwrap();
    }
    for r in &rounds {
        writeln!(
            text,
            "round {}: ess {:.1}, reward min/mean/max {:.4}/{:.4}/{:.4}",
            r.round, r.ess, r.min_reward, r.mean_reward, r.max_reward
        )
        .unwrap();
    }
    let usage_path: PathBuf = run.join("usage.json");
    if usage_path.exists() {
        let u: UsageSummary = serde_json::from_str(&fs::read_to_string(usage_path)?)?;
        writeln!(
            text,
            "usage: {} requests, {} input / {} output tokens, cost {:.6}",
            u.requests, u.input_tokens, u.output_tokens, u.total_cost
        )
        .unwrap();
    }
    Ok(text)
}
