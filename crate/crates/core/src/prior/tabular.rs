use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_extendable, PriorError, PriorModel};
use crate::workflow::{Step, Workflow};

const ROW_TOLERANCE: f64 = 1e-9;

/// On-disk form: `{"alphabet":[...],"horizon":T,"rows":{"<ctx>":[p...]}}`,
/// where `<ctx>` is the context's alphabet indices joined by `,` (empty for
/// the root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPriorSpec {
    pub alphabet: Vec<String>,
    pub horizon: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

/// A finite-alphabet prior given by an explicit conditional table.
#[derive(Debug, Clone)]
pub struct TabularPrior {
    alphabet: Vec<String>,
    lookup: HashMap<String, usize>,
    horizon: usize,
    rows: HashMap<Vec<usize>, Vec<f64>>,
}

pub(crate) fn context_key(ctx: &[usize]) -> String {
    ctx.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_context(key: &str) -> Result<Vec<usize>, PriorError> {
    if key.trim().is_empty() {
        return Ok(Vec::new());
    }
    key.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| PriorError::InvalidTable(format!("bad context key {key:?}")))
        })
        .collect()
}

impl TabularPrior {
    pub fn from_spec(spec: TabularPriorSpec) -> Result<Self, PriorError> {
        let TabularPriorSpec { alphabet, horizon, rows: raw } = spec;
        if horizon == 0 {
            return Err(PriorError::InvalidTable("horizon must be at least 1".into()));
        }
        if alphabet.is_empty() {
            return Err(PriorError::InvalidTable("empty alphabet".into()));
        }
        let mut lookup = HashMap::with_capacity(alphabet.len());
        for (i, a) in alphabet.iter().enumerate() {
            if a.is_empty() {
                return Err(PriorError::InvalidTable("alphabet entries must be non-empty".into()));
            }
            if lookup.insert(a.clone(), i).is_some() {
                return Err(PriorError::InvalidTable(format!("duplicate alphabet entry {a:?}")));
            }
        }
        let mut rows = HashMap::with_capacity(raw.len());
        for (key, row) in raw {
            let ctx = parse_context(&key)?;
            if ctx.len() >= horizon {
                return Err(PriorError::InvalidTable(format!(
                    "context [{key}] is not shorter than the horizon"
                )));
            }
            if let Some(&bad) = ctx.iter().find(|&&i| i >= alphabet.len()) {
                return Err(PriorError::InvalidTable(format!("context index {bad} out of range")));
            }
            validate_row(&key, &row, alphabet.len())?;
            rows.insert(ctx, row);
        }
        let prior = Self { alphabet, lookup, horizon, rows };
        prior.check_reachable_rows()?;
        Ok(prior)
    }

    pub fn from_json_str(json: &str) -> Result<Self, PriorError> {
        Self::from_spec(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PriorError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Same distribution at every context.
    pub fn stationary(alphabet: Vec<String>, horizon: usize, row: Vec<f64>) -> Result<Self, PriorError> {
        let mut rows = BTreeMap::new();
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for ctx in frontier {
                rows.insert(context_key(&ctx), row.clone());
                for i in 0..alphabet.len() {
                    let mut c = ctx.clone();
                    c.push(i);
                    next.push(c);
                }
            }
            frontier = next;
        }
        Self::from_spec(TabularPriorSpec { alphabet, horizon, rows })
    }

    pub fn uniform(alphabet: Vec<String>, horizon: usize) -> Result<Self, PriorError> {
        let n = alphabet.len().max(1);
        Self::stationary(alphabet, horizon, vec![1.0 / n as f64; n])
    }

    pub fn to_spec(&self) -> TabularPriorSpec {
        TabularPriorSpec {
            alphabet: self.alphabet.clone(),
            horizon: self.horizon,
            rows: self.rows.iter().map(|(k, v)| (context_key(k), v.clone())).collect(),
        }
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn symbol(&self, text: &str) -> Option<usize> {
        self.lookup.get(text).copied()
    }

    pub fn row(&self, ctx: &[usize]) -> Option<&[f64]> {
        self.rows.get(ctx).map(Vec::as_slice)
    }

    /// Alphabet indices of a workflow's steps.
    pub fn encode(&self, w: &Workflow) -> Result<Vec<usize>, PriorError> {
        w.texts()
            .map(|t| self.symbol(t).ok_or_else(|| PriorError::UnknownStep(t.to_string())))
            .collect()
    }

    pub fn decode(&self, symbols: &[usize]) -> Workflow {
        Workflow::from_texts(symbols.iter().map(|&i| self.alphabet[i].clone()), self.horizon)
            .expect("alphabet entries are non-empty and the length fits the horizon")
    }

    /// p(suffix | ctx) by the chain rule; zero when a needed row is absent.
    pub fn conditional_probability(&self, ctx: &[usize], suffix: &[usize]) -> f64 {
        let mut context = ctx.to_vec();
        let mut p = 1.0;
        for &s in suffix {
            match self.rows.get(&context) {
                Some(row) => p *= row[s],
                None => return 0.0,
            }
            if p == 0.0 {
                return 0.0;
            }
            context.push(s);
        }
        p
    }

    pub fn probability(&self, symbols: &[usize]) -> f64 {
        self.conditional_probability(&[], symbols)
    }

    fn check_reachable_rows(&self) -> Result<(), PriorError> {
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        while let Some(ctx) = frontier.pop() {
            if ctx.len() >= self.horizon {
                continue;
            }
            let row = self
                .rows
                .get(&ctx)
                .ok_or_else(|| PriorError::MissingContext(context_key(&ctx)))?;
            for (i, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let mut next = ctx.clone();
                    next.push(i);
                    frontier.push(next);
                }
            }
        }
        Ok(())
    }
}

fn validate_row(key: &str, row: &[f64], width: usize) -> Result<(), PriorError> {
    if row.len() != width {
        return Err(PriorError::InvalidTable(format!(
            "row [{key}] has {} entries, expected {width}",
            row.len()
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(PriorError::InvalidTable(format!("row [{key}] has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(PriorError::InvalidTable(format!("row [{key}] sums to {total}")));
    }
    Ok(())
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_index(row: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl PriorModel for TabularPrior {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn extend_one(&self, prefix: &Workflow, rng: &mut dyn RngCore) -> Result<Step, PriorError> {
        check_extendable(prefix, self.horizon)?;
        let ctx = self.encode(prefix)?;
        let row = self.rows.get(&ctx).ok_or_else(|| PriorError::MissingContext(context_key(&ctx)))?;
        let i = sample_index(row, rng);
        Ok(Step { index: prefix.len() + 1, text: self.alphabet[i].clone() })
    }
}
