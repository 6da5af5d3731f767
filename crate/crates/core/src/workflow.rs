//! Workflows as ordered sequences of step chunks.
//!
//! A workflow of horizon `T` holds at most `T` steps. Trajectories that end
//! early are padded with empty steps up to the horizon; padding is only ever a
//! suffix and never contributes to a workflow's identity or rendering.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default maximum number of steps.
pub const DEFAULT_HORIZON: usize = 5;

const ID_SEPARATOR: &[u8] = b"\x1f";

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t]*#[ \t]*step[ \t]+(\d+)[ \t]*:").unwrap());

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("no `# Step <n>:` markers found")]
    NoMarkers,
    #[error("found {found} step markers but the horizon is {horizon}")]
    TooManySteps { found: usize, horizon: usize },
    #[error("{len} steps do not fit in horizon {horizon}")]
    HorizonExceeded { len: usize, horizon: usize },
    #[error("cannot extend a complete workflow")]
    AlreadyComplete,
    #[error("padding must be a suffix: non-empty step {index} follows padding")]
    PaddingNotSuffix { index: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
}

impl Step {
    pub fn is_padding(&self) -> bool {
        self.text.is_empty()
    }

    /// Step text without a leading marker line or the trailing newline that
    /// rendering inserts between steps.
    pub fn body(&self) -> &str {
        let text = match MARKER.find(&self.text) {
            Some(m) if m.start() == 0 => match self.text[m.end()..].find('\n') {
                Some(nl) => &self.text[m.end() + nl + 1..],
                None => "",
            },
            _ => self.text.as_str(),
        };
        text.strip_suffix('\n').unwrap_or(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowKind {
    Prefix,
    Complete,
}

/// Content digest of a workflow's non-padding steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkflowId(String);

impl WorkflowId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WorkflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered list of steps bounded by a horizon.
///
/// Indices are always consecutive from 1; the kind is `Complete` exactly when
/// the step count has reached the horizon.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Workflow {
    steps: Vec<Step>,
    horizon: usize,
}

impl Workflow {
    /// The unique length-0 workflow.
    pub fn empty(horizon: usize) -> Self {
        Self { steps: Vec::new(), horizon }
    }

    /// Builds a workflow from raw step texts, renumbering from 1.
    pub fn from_texts<I, S>(texts: I, horizon: usize) -> Result<Self, WorkflowError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if horizon == 0 {
            return Err(WorkflowError::ZeroHorizon);
        }
        let steps: Vec<Step> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Step { index: i + 1, text: t.into() })
            .collect();
        if steps.len() > horizon {
            return Err(WorkflowError::HorizonExceeded { len: steps.len(), horizon });
        }
        check_padding_suffix(&steps)?;
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.text.as_str())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of steps including padding.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of non-padding steps.
    pub fn real_len(&self) -> usize {
        self.steps.iter().take_while(|s| !s.is_padding()).count()
    }

    pub fn kind(&self) -> WorkflowKind {
        if self.steps.len() == self.horizon {
            WorkflowKind::Complete
        } else {
            WorkflowKind::Prefix
        }
    }

    pub fn is_complete(&self) -> bool {
        self.kind() == WorkflowKind::Complete
    }

    /// True when the last step is padding, i.e. the trajectory has already ended.
    pub fn has_ended(&self) -> bool {
        self.steps.last().is_some_and(Step::is_padding)
    }

    /// Appends one step.
    pub fn push(&mut self, text: impl Into<String>) -> Result<(), WorkflowError> {
        if self.is_complete() {
            return Err(WorkflowError::AlreadyComplete);
        }
        let text = text.into();
        if !text.is_empty() && self.has_ended() {
            return Err(WorkflowError::PaddingNotSuffix { index: self.steps.len() + 1 });
        }
        self.steps.push(Step { index: self.steps.len() + 1, text });
        Ok(())
    }

    /// Fills the remaining slots with empty steps.
    pub fn padded(mut self) -> Self {
        while self.steps.len() < self.horizon {
            let index = self.steps.len() + 1;
            self.steps.push(Step { index, text: String::new() });
        }
        self
    }

    /// The first `t` steps, padding first if the workflow is shorter than `t`.
    pub fn project(&self, t: usize) -> Self {
        let t = t.min(self.horizon);
        let mut out = if self.steps.len() < t { self.clone().padded() } else { self.clone() };
        out.steps.truncate(t);
        out
    }

    /// Appends `suffix` to a prefix.
    pub fn concat(&self, suffix: &[Step]) -> Result<Self, WorkflowError> {
        if self.is_complete() && !suffix.is_empty() {
            return Err(WorkflowError::AlreadyComplete);
        }
        let len = self.steps.len() + suffix.len();
        if len > self.horizon {
            return Err(WorkflowError::HorizonExceeded { len, horizon: self.horizon });
        }
        let mut out = self.clone();
        for step in suffix {
            out.push(step.text.clone())?;
        }
        Ok(out)
    }

    /// Content hash over non-padding steps.
    pub fn id(&self) -> WorkflowId {
        let mut hasher = Sha256::new();
        for (i, step) in self.steps.iter().filter(|s| !s.is_padding()).enumerate() {
            if i > 0 {
                hasher.update(ID_SEPARATOR);
            }
            hasher.update(step.text.as_bytes());
        }
        WorkflowId(hex::encode(hasher.finalize()))
    }

    /// Renders non-padding steps with canonical `# Step <n>:` marker lines.
    ///
    /// A step whose text already carries a marker line is emitted verbatim so
    /// that parse/render round-trips on parsed sources.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in self.steps.iter().filter(|s| !s.is_padding()) {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            if MARKER.is_match(&step.text) {
                out.push_str(&step.text);
            } else {
                out.push_str(&format!("# Step {}:\n", step.index));
                out.push_str(&step.text);
            }
        }
        out
    }
}

impl fmt::Display for Workflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn check_padding_suffix(steps: &[Step]) -> Result<(), WorkflowError> {
    let mut seen_padding = false;
    for step in steps {
        if step.is_padding() {
            seen_padding = true;
        } else if seen_padding {
            return Err(WorkflowError::PaddingNotSuffix { index: step.index });
        }
    }
    Ok(())
}

/// Byte offsets of every step marker line, in source order.
pub fn marker_offsets(source: &str) -> Vec<usize> {
    MARKER.find_iter(source).map(|m| m.start()).collect()
}

/// Splits annotated source into steps at `# Step <n>:` marker lines.
///
/// Markers are renumbered by position; text before the first marker is
/// attached to step 1. The result is padded to `horizon`.
pub fn parse_annotated(source: &str, horizon: usize) -> Result<Workflow, WorkflowError> {
    if horizon == 0 {
        return Err(WorkflowError::ZeroHorizon);
    }
    let offsets = marker_offsets(source);
    if offsets.is_empty() {
        return Err(WorkflowError::NoMarkers);
    }
    if offsets.len() > horizon {
        return Err(WorkflowError::TooManySteps { found: offsets.len(), horizon });
    }
    let mut texts = Vec::with_capacity(offsets.len());
    for (k, &start) in offsets.iter().enumerate() {
        let from = if k == 0 { 0 } else { start };
        let to = offsets.get(k + 1).copied().unwrap_or(source.len());
        texts.push(source[from..to].to_string());
    }
    Ok(Workflow::from_texts(texts, horizon)?.padded())
}
