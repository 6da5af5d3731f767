use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_complete, check_range, Evaluation, RewardError, RewardModel};
use crate::workflow::Workflow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRewardEntry {
    pub steps: Vec<String>,
    pub reward: f64,
}

/// On-disk form: `{"default": r, "entries": [{"steps": [...], "reward": r}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRewardSpec {
    #[serde(default)]
    pub default: f64,
    pub entries: Vec<TabularRewardEntry>,
}

/// Explicit reward table over non-padding step sequences.
#[derive(Debug, Clone)]
pub struct TabularReward {
    table: HashMap<Vec<String>, f64>,
    default: f64,
}

impl TabularReward {
    pub fn new<I>(entries: I, default: f64) -> Result<Self, RewardError>
    where
        I: IntoIterator<Item = (Vec<String>, f64)>,
    {
        check_range(default)?;
        let mut table = HashMap::new();
        for (steps, r) in entries {
            check_range(r)?;
            if table.insert(steps.clone(), r).is_some() {
                return Err(RewardError::InvalidTable(format!("duplicate entry {steps:?}")));
            }
        }
        Ok(Self { table, default })
    }

    pub fn from_spec(spec: TabularRewardSpec) -> Result<Self, RewardError> {
        Self::new(spec.entries.into_iter().map(|e| (e.steps, e.reward)), spec.default)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        Self::from_spec(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_spec(&self) -> TabularRewardSpec {
        let mut entries: Vec<TabularRewardEntry> = self
            .table
            .iter()
            .map(|(steps, &reward)| TabularRewardEntry { steps: steps.clone(), reward })
            .collect();
        entries.sort_by(|a, b| a.steps.cmp(&b.steps));
        TabularRewardSpec { default: self.default, entries }
    }

    /// Reward for a raw step sequence.
    pub fn lookup<S: AsRef<str>>(&self, steps: &[S]) -> f64 {
        let key: Vec<String> = steps
            .iter()
            .map(|s| s.as_ref())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        self.table.get(&key).copied().unwrap_or(self.default)
    }
}

impl RewardModel for TabularReward {
    fn score(&self, w: &Workflow) -> Result<Evaluation, RewardError> {
        check_complete(w)?;
        let steps: Vec<&str> = w.texts().collect();
        Ok(Evaluation::free(self.lookup(&steps)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn lookup_and_default() {
        let r = TabularReward::new([(s(&["a", "b", "c"]), 1.0)], 0.0).unwrap();
        let abc = Workflow::from_texts(["a", "b", "c"], 3).unwrap();
        let abb = Workflow::from_texts(["a", "b", "b"], 3).unwrap();
        assert_eq!(r.score(&abc).unwrap().reward, 1.0);
        assert_eq!(r.score(&abb).unwrap().reward, 0.0);
    }

    #[test]
    fn rejects_prefixes_and_bad_values() {
        let r = TabularReward::new([], 0.0).unwrap();
        let prefix = Workflow::from_texts(["a"], 3).unwrap();
        assert!(matches!(r.score(&prefix), Err(RewardError::NotComplete { len: 1, horizon: 3 })));
        assert!(matches!(TabularReward::new([(s(&["a"]), 1.5)], 0.0), Err(RewardError::OutOfRange(_))));
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"default":0.25,"entries":[{"steps":["a"],"reward":0.5}]}"#;
        let spec: TabularRewardSpec = serde_json::from_str(json).unwrap();
        let r = TabularReward::from_spec(spec.clone()).unwrap();
        assert_eq!(r.to_spec(), spec);
    }
}
