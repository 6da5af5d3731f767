use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use super::{
    ess, normalize_log, resample_indices, Archive, PoolEntry, Provenance, RefinerPool, RoundStats,
    RunArtifacts, RunConfig, SmcError, WeightScheme,
};
use crate::prior::PriorModel;
use crate::refiner::{PoolCandidate, Proposal, Refiner};
use crate::reward::{energy, RewardCache, RewardError, RewardModel};
use crate::rng::{purpose, stream};
use crate::workflow::Workflow;

/// A prefix carried through the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub prefix: Workflow,
    /// Look-ahead value: mean rollout energy of `prefix`.
    pub weight: f64,
    /// Log of the weight used when resampling.
    pub log_weight: f64,
    /// Scored complete rollouts behind `weight`.
    pub rollouts: Vec<(Workflow, f64)>,
}

impl Particle {
    fn root(horizon: usize) -> Self {
        Self { prefix: Workflow::empty(horizon), weight: 1.0, log_weight: 0.0, rollouts: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Extended and scored particles, before resampling.
    pub particles: Vec<Particle>,
    pub proposals: Vec<Proposal>,
    /// Resampled particles for the next round.
    pub next: Vec<Particle>,
    /// Every complete workflow produced this round, in generation order.
    pub completes: Vec<PoolEntry>,
    pub stats: RoundStats,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub archive: Archive,
    pub best: PoolEntry,
    pub rounds: Vec<RoundStats>,
    /// Resampled particles after the last round; each is a complete workflow.
    pub particles: Vec<Particle>,
}

/// Averages `exp(reward)` over `k` completions of `prefix`.
pub fn lookahead_weight(
    prior: &dyn PriorModel,
    reward: &dyn RewardModel,
    prefix: &Workflow,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<(Workflow, f64)>), SmcError> {
    lookahead_with(prior, &|w| match reward.score(w) {
        Ok(e) => Ok(e.reward),
        Err(RewardError::ExecutionFailed(_)) => Ok(0.0),
        Err(e) => Err(e.into()),
    }, prefix, k, rng)
}

fn lookahead_with(
    prior: &dyn PriorModel,
    score: &dyn Fn(&Workflow) -> Result<f64, SmcError>,
    prefix: &Workflow,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<(Workflow, f64)>), SmcError> {
    if k == 0 {
        return Err(SmcError::InvalidConfig("K must be at least 1".into()));
    }
    let mut rollouts = Vec::with_capacity(k);
    let mut total = 0.0;
    for _ in 0..k {
        let complete = if prefix.is_complete() { prefix.clone() } else { prior.rollout(prefix, rng)? };
        let r = score(&complete)?;
        total += energy(r);
        rollouts.push((complete, r));
    }
    Ok((total / k as f64, rollouts))
}

/// One configured sampler run.
pub struct Smc<'a> {
    cfg: RunConfig,
    prior: &'a dyn PriorModel,
    reward: &'a dyn RewardModel,
    refiner: &'a dyn Refiner,
    cache: Arc<RewardCache>,
    artifacts: Option<RunArtifacts>,
    workers: ThreadPool,
}

impl<'a> Smc<'a> {
    pub fn new(
        cfg: RunConfig,
        prior: &'a dyn PriorModel,
        reward: &'a dyn RewardModel,
        refiner: &'a dyn Refiner,
    ) -> Result<Self, SmcError> {
        cfg.validate()?;
        if prior.horizon() != cfg.horizon {
            return Err(SmcError::InvalidConfig(format!(
                "prior horizon {} differs from T = {}",
                prior.horizon(),
                cfg.horizon
            )));
        }
        let workers = ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| SmcError::InvalidConfig(e.to_string()))?;
        Ok(Self { cfg, prior, reward, refiner, cache: Arc::new(RewardCache::new()), artifacts: None, workers })
    }

    /// Shares a reward cache (e.g. one warmed from a journal).
    pub fn with_cache(mut self, cache: Arc<RewardCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_artifacts(mut self, artifacts: RunArtifacts) -> Self {
        self.artifacts = Some(artifacts);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &Arc<RewardCache> {
        &self.cache
    }

    fn score(&self, w: &Workflow, round: usize) -> Result<f64, SmcError> {
        Ok(self.cache.score(self.reward, w, round)?.reward)
    }

    /// Runs T rounds from N empty prefixes.
    pub fn run(&mut self) -> Result<RunResult, SmcError> {
        let mut archive = Archive::new();
        let mut rounds = Vec::with_capacity(self.cfg.horizon);
        let mut particles = vec![Particle::root(self.cfg.horizon); self.cfg.n];
        for t in 1..=self.cfg.horizon {
            let out = self
                .step_update(&particles, t, &mut archive)
                .map_err(|e| SmcError::Round { round: t, source: Box::new(e) });
            let out = match out {
                Ok(o) => o,
                Err(e) => {
                    if let Some(a) = self.artifacts.as_mut() {
                        a.flush()?;
                    }
                    return Err(e);
                }
            };
            if let Some(a) = self.artifacts.as_mut() {
                a.append_round(&out.stats)?;
            }
            log::info!(
                "round {t}: ess {:.1}, reward min/mean/max {:.3}/{:.3}/{:.3}",
                out.stats.ess,
                out.stats.min_reward,
                out.stats.mean_reward,
                out.stats.max_reward
            );
            rounds.push(out.stats);
            particles = out.next;
        }
        let best = archive.best().cloned().ok_or(SmcError::EmptyPool)?;
        if let Some(a) = self.artifacts.as_mut() {
            a.write_best(&best)?;
            a.flush()?;
        }
        Ok(RunResult { archive, best, rounds, particles })
    }

    /// Extend, score, refine, augment and resample for round `t`.
    pub fn step_update(&mut self, particles: &[Particle], t: usize, archive: &mut Archive) -> Result<RoundOutput, SmcError> {
        if let Some(p) = particles.iter().find(|p| p.prefix.len() + 1 != t) {
            return Err(SmcError::InvalidConfig(format!(
                "round {t} expects prefixes of length {}, found {}",
                t - 1,
                p.prefix.len()
            )));
        }
        let seed = self.cfg.seed;
        let k = self.cfg.k;
        let weighting = self.cfg.weighting;
        let this = &*self;
        let extended: Vec<Particle> = this.workers.install(|| {
            particles
                .par_iter()
                .enumerate()
                .map(|(i, parent)| {
                    let path = [t as u64, i as u64];
                    let mut rng = stream(seed, &[purpose::EXTEND, path[0], path[1]]);
                    let step = this.prior.extend_one(&parent.prefix, &mut rng)?;
                    let mut prefix = parent.prefix.clone();
                    prefix.push(step.text).map_err(crate::prior::PriorError::from)?;
                    let mut rng = stream(seed, &[purpose::LOOKAHEAD, path[0], path[1]]);
                    let (value, rollouts) = lookahead_with(this.prior, &|w| this.score(w, t), &prefix, k, &mut rng)?;
                    let log_weight = match weighting {
                        WeightScheme::Incremental => value.ln() - parent.weight.ln(),
                        WeightScheme::Lookahead => value.ln(),
                    };
                    Ok(Particle { prefix, weight: value, log_weight, rollouts })
                })
                .collect::<Result<Vec<_>, SmcError>>()
        })?;

        let mut completes = Vec::with_capacity(extended.len() * k + self.cfg.m);
        let mut pool = Vec::new();
        if self.cfg.refiner_pool == RefinerPool::Archive {
            pool.extend(archive.entries().iter().map(|e| PoolCandidate { entry: e.clone(), weight: 1.0 }));
        }
        let max_log = extended.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
        for p in &extended {
            for (w, r) in &p.rollouts {
                let entry = PoolEntry::new(w.clone(), *r, t, Provenance::Rollout);
                pool.push(PoolCandidate { entry: entry.clone(), weight: (p.log_weight - max_log).exp() });
                completes.push(entry);
            }
        }

        let proposals = if self.cfg.m > 0 {
            let mut rng = stream(seed, &[purpose::REFINE, t as u64]);
            let mut score = |w: &Workflow| self.score(w, t);
            self.refiner.propose(&mut pool, self.cfg.m, t, &mut rng, &mut score)?
        } else {
            Vec::new()
        };
        completes.extend(
            proposals
                .iter()
                .map(|p| PoolEntry::new(p.workflow.clone(), p.reward, t, Provenance::Refinement)),
        );
        for entry in &completes {
            if archive.insert(entry.clone()) {
                if let Some(a) = self.artifacts.as_mut() {
                    a.append_entry(entry)?;
                }
            }
        }

        // Proposals enter the pool at their first t steps.
        let parent_norm = match weighting {
            WeightScheme::Incremental => {
                (particles.iter().map(|p| p.weight).sum::<f64>() / particles.len() as f64).ln()
            }
            WeightScheme::Lookahead => 0.0,
        };
        let mut augmented: Vec<Particle> = extended.clone();
        augmented.extend(proposals.iter().map(|p| Particle {
            prefix: p.workflow.project(t),
            weight: energy(p.reward),
            log_weight: p.reward - parent_norm,
            rollouts: vec![(p.workflow.clone(), p.reward)],
        }));

        let log_weights: Vec<f64> = augmented.iter().map(|p| p.log_weight).collect();
        let probs = normalize_log(&log_weights)?;
        let mut rng = stream(seed, &[purpose::RESAMPLE, t as u64]);
        let picks = resample_indices(&probs, self.cfg.n, self.cfg.resampling, &mut rng);
        let next: Vec<Particle> = picks.into_iter().map(|i| augmented[i].clone()).collect();

        let rewards: Vec<f64> = completes.iter().map(|e| e.reward).collect();
        let values = extended.iter().map(|p| p.weight);
        let (vmin, vmax) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let stats = RoundStats {
            round: t,
            n: next.len(),
            pool: augmented.len(),
            ess: ess(&probs),
            min_reward: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            lookahead_ratio: vmax / vmin,
        };
        Ok(RoundOutput { particles: extended, proposals, next, completes, stats })
    }
}
