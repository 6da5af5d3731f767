use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{check_range, RewardError, RewardModel};
use crate::workflow::{Workflow, WorkflowId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachedReward {
    pub reward: f64,
    pub cost: f64,
    /// Round in which the workflow was first evaluated.
    pub round: usize,
}

/// One line of `rewards.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub id: WorkflowId,
    pub reward: f64,
    pub cost: f64,
    pub round: usize,
}

type Slot = Arc<Mutex<Option<CachedReward>>>;

/// Evaluate-once cache keyed by [`WorkflowId`].
///
/// Concurrent requests for the same id wait on one evaluation. Failed
/// executions are stored as reward 0; other errors are not cached.
#[derive(Default)]
pub struct RewardCache {
    slots: Mutex<HashMap<WorkflowId, Slot>>,
    evaluations: AtomicUsize,
    journal: Option<Mutex<File>>,
}

impl RewardCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) an append-only journal, preloading earlier records.
    pub fn with_journal(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let path = path.as_ref();
        let mut slots = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: RewardRecord = serde_json::from_str(&line)
                    .map_err(|e| RewardError::Journal(format!("line {}: {e}", n + 1)))?;
                let cached = CachedReward { reward: rec.reward, cost: rec.cost, round: rec.round };
                slots.entry(rec.id).or_insert_with(|| Arc::new(Mutex::new(Some(cached))));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            slots: Mutex::new(slots),
            evaluations: AtomicUsize::new(0),
            journal: Some(Mutex::new(file)),
        })
    }

    /// Underlying evaluations performed by this cache instance.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &WorkflowId) -> Option<CachedReward> {
        let slot = self.slots.lock().unwrap().get(id).cloned()?;
        let value = *slot.lock().unwrap();
        value
    }

    pub fn score(
        &self,
        model: &dyn RewardModel,
        w: &Workflow,
        round: usize,
    ) -> Result<CachedReward, RewardError> {
        let id = w.id();
        let slot = self.slots.lock().unwrap().entry(id.clone()).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some(hit) = *guard {
            return Ok(hit);
        }
        let evaluation = match model.score(w) {
            Ok(e) => e,
            Err(RewardError::ExecutionFailed(msg)) => {
                log::warn!("workflow {} failed to execute, scoring 0: {msg}", short(&id));
                super::Evaluation::free(0.0)
            }
            Err(e) => return Err(e),
        };
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let reward = check_range(evaluation.reward)?;
        let cached = CachedReward { reward, cost: evaluation.cost, round };
        if let Some(journal) = &self.journal {
            let rec = RewardRecord { id, reward, cost: cached.cost, round };
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let mut file = journal.lock().unwrap();
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        *guard = Some(cached);
        Ok(cached)
    }
}

fn short(id: &WorkflowId) -> &str {
    &id.as_str()[..12.min(id.as_str().len())]
}
