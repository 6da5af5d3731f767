//! Sampler-versus-oracle checks on exact tabular instances.

use serde::Serialize;

use crate::oracle::{tv_distance, ExactInstance};
use crate::refiner::{NoRefiner, Perturbation, Refiner, SyntheticEpsilonRefiner};
use crate::smc::{RoundStats, RunConfig, Smc, SmcError};

/// Outcome of one seeded run against the oracle.
#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub n: usize,
    /// TV between the final particle population and the posterior.
    pub tv: f64,
    /// Mean reward of the final particle population.
    pub mean_reward: f64,
    pub rounds: Vec<RoundStats>,
}

/// Runs the sampler once and compares its final population with the oracle.
pub fn seeded_run(
    inst: &ExactInstance,
    cfg: RunConfig,
    refiner: &dyn Refiner,
) -> Result<SeedRun, SmcError> {
    let seed = cfg.seed;
    let n = cfg.n;
    let mut smc = Smc::new(cfg, inst.tabular_prior(), inst.tabular_reward(), refiner)?;
    let out = smc.run()?;
    let dist = inst.empirical(out.particles.iter().map(|p| &p.prefix));
    Ok(SeedRun {
        seed,
        n,
        tv: tv_distance(&dist, inst.posterior()),
        mean_reward: inst.expected_reward(&dist),
        rounds: out.rounds,
    })
}

/// Base config for oracle checks: no refiner, horizon from the instance.
pub fn oracle_config(inst: &ExactInstance, n: usize, k: usize, seed: u64, workers: usize) -> RunConfig {
    RunConfig { n, k, m: 0, horizon: inst.horizon(), seed, workers, ..RunConfig::default() }
}

/// `seeds` runs without refinement, seeds `base..base + seeds`.
pub fn convergence_sweep(
    inst: &ExactInstance,
    n: usize,
    k: usize,
    base: u64,
    seeds: usize,
    workers: usize,
) -> Result<Vec<SeedRun>, SmcError> {
    (0..seeds as u64)
        .map(|s| seeded_run(inst, oracle_config(inst, n, k, base + s, workers), &NoRefiner))
        .collect()
}

/// Runs with the synthetic ε-refiner, `M = N`, perturbing towards the
/// lowest-posterior trajectory.
pub fn epsilon_sweep(
    inst: &ExactInstance,
    epsilon: f64,
    n: usize,
    k: usize,
    base: u64,
    seeds: usize,
    workers: usize,
) -> Result<Vec<SeedRun>, SmcError> {
    let refiner = SyntheticEpsilonRefiner::new(epsilon, Perturbation::Fixed(inst.workflow(least_likely(inst))))?;
    (0..seeds as u64)
        .map(|s| {
            let cfg = RunConfig { m: n, ..oracle_config(inst, n, k, base + s, workers) };
            seeded_run(inst, cfg, &refiner)
        })
        .collect()
}

/// Index of the trajectory with the smallest posterior mass.
pub fn least_likely(inst: &ExactInstance) -> usize {
    let q = inst.posterior();
    (0..q.len()).min_by(|&a, &b| q[a].total_cmp(&q[b])).expect("instance is non-empty")
}

/// Three-sigma bound on the TV of an N-sample empirical distribution of `q`.
pub fn sampling_slack(q: &[f64], n: usize) -> f64 {
    3.0 * 0.5 * q.iter().map(|p| (p * (1.0 - p) / n as f64).sqrt()).sum::<f64>()
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = xs.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c.max(1) as f64
}

/// True when each round's mean reward is at least the previous one's.
pub fn nondecreasing(rounds: &[RoundStats]) -> bool {
    rounds.windows(2).all(|w| w[1].mean_reward >= w[0].mean_reward)
}
