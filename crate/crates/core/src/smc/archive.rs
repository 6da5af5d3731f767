use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::workflow::{Workflow, WorkflowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rollout,
    Refinement,
}

/// A scored complete workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: WorkflowId,
    pub round: usize,
    pub provenance: Provenance,
    pub reward: f64,
    pub workflow: Workflow,
}

impl PoolEntry {
    pub fn new(workflow: Workflow, reward: f64, round: usize, provenance: Provenance) -> Self {
        Self { id: workflow.id(), round, provenance, reward, workflow }
    }
}

/// Every distinct complete workflow seen during a run, first sighting kept.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    entries: Vec<PoolEntry>,
    index: HashMap<WorkflowId, usize>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless the id is already present with an earlier or equal
    /// round. Returns whether the archive changed.
    pub fn insert(&mut self, entry: PoolEntry) -> bool {
        match self.index.get(&entry.id) {
            Some(&i) if self.entries[i].round <= entry.round => false,
            Some(&i) => {
                self.entries[i] = entry;
                true
            }
            None => {
                self.index.insert(entry.id.clone(), self.entries.len());
                self.entries.push(entry);
                true
            }
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &WorkflowId) -> Option<&PoolEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    /// Highest reward; ties go to the earliest round, then the smallest id.
    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries.iter().min_by(|a, b| {
            b.reward
                .total_cmp(&a.reward)
                .then(a.round.cmp(&b.round))
                .then_with(|| a.id.cmp(&b.id))
        })
    }
}
