use std::sync::{Arc, Mutex};

use rand::RngCore;

use super::{insert_proposal, select_candidate, PoolCandidate, Proposal, RefineError, Refiner, ScoreFn};
use crate::gateway::{ChatRequest, Gateway};
use crate::prior::STEP_FORMAT_RULES;
use crate::smc::SmcError;
use crate::workflow::{parse_annotated, Workflow, WorkflowId};

/// Edit prompt with `{source}`, `{reward}` and `{format_rules}` placeholders.
pub const DEFAULT_EDIT_TEMPLATE: &str = "Below is an agentic workflow and its validation score.\n\n\
Validation score: {reward}\n\nWorkflow:\n{source}\n\n\
Analyse where this workflow loses accuracy and make one consequential edit that should raise \
the score. You may rewrite any step, including early ones. Return the full revised workflow.\n\n\
{format_rules}";

/// Rewrites one complete workflow.
pub trait WorkflowEditor: Send + Sync {
    fn edit(&self, source: &Workflow, reward: f64, rng: &mut dyn RngCore) -> Result<Workflow, RefineError>;
}

/// Editor backed by the meta-optimizer model.
pub struct LlmEditor {
    gateway: Arc<Gateway>,
    template: String,
    agent_role: String,
    temperature: f64,
}

impl LlmEditor {
    pub fn new(gateway: Arc<Gateway>, temperature: f64) -> Self {
        Self {
            gateway,
            template: DEFAULT_EDIT_TEMPLATE.to_string(),
            agent_role: "workflow designer who improves agentic LLM workflows".into(),
            temperature,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }
}

impl WorkflowEditor for LlmEditor {
    fn edit(&self, source: &Workflow, reward: f64, _rng: &mut dyn RngCore) -> Result<Workflow, RefineError> {
        edit_workflow(&self.gateway, &self.template, &self.agent_role, self.temperature, source, reward)
    }
}

/// Sends one edit request for `source` and parses the reply, retrying once
/// with the parse error appended.
pub fn edit_workflow(
    gateway: &Gateway,
    template: &str,
    agent_role: &str,
    temperature: f64,
    source: &Workflow,
    reward: f64,
) -> Result<Workflow, RefineError> {
    let horizon = source.horizon();
    let rules = STEP_FORMAT_RULES.replace("{horizon}", &horizon.to_string());
    let prompt = template
        .replace("{source}", &source.render())
        .replace("{reward}", &format!("{reward:.4}"))
        .replace("{format_rules}", &rules);
    let mut error_log: Option<String> = None;
    for _ in 0..2 {
        let text = crate::prior::llm_correction_prompt(&prompt, error_log.as_deref());
        let req = ChatRequest::new(vec![text], temperature, 1).role(agent_role.to_string()).instructions(rules.clone());
        let reply = gateway
            .call_llm(&req)
            .map_err(|e| RefineError::EditFailed(e.to_string()))?
            .pop()
            .unwrap_or_default();
        match parse_annotated(&reply, horizon) {
            Ok(w) => return Ok(w),
            Err(e) => error_log = Some(e.to_string()),
        }
    }
    Err(RefineError::EditFailed(error_log.unwrap_or_default()))
}

/// Top-C softmax selection followed by a single edit.
pub struct SoftmaxEditRefiner {
    top_c: usize,
    temperature: f64,
    editor: Arc<dyn WorkflowEditor>,
    trace: Option<Mutex<Vec<Vec<WorkflowId>>>>,
}

impl SoftmaxEditRefiner {
    pub fn new(editor: Arc<dyn WorkflowEditor>, top_c: usize, temperature: f64) -> Result<Self, RefineError> {
        if top_c == 0 || temperature.is_nan() || temperature <= 0.0 {
            return Err(RefineError::InvalidSetting(format!("top_c={top_c}, temperature={temperature}")));
        }
        Ok(Self { top_c, temperature, editor, trace: None })
    }

    /// Records the pool ids visible at each selection.
    pub fn traced(mut self) -> Self {
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn trace(&self) -> Vec<Vec<WorkflowId>> {
        self.trace.as_ref().map(|t| t.lock().unwrap().clone()).unwrap_or_default()
    }
}

impl Refiner for SoftmaxEditRefiner {
    fn propose(
        &self,
        pool: &mut Vec<PoolCandidate>,
        m: usize,
        round: usize,
        rng: &mut dyn RngCore,
        score: &mut ScoreFn<'_>,
    ) -> Result<Vec<Proposal>, SmcError> {
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            if let Some(trace) = &self.trace {
                trace.lock().unwrap().push(pool.iter().map(|c| c.entry.id.clone()).collect());
            }
            let i = select_candidate(pool, self.top_c, self.temperature, rng)?;
            let source = pool[i].entry.clone();
            let weight = pool[i].weight;
            let (workflow, passthrough) = match self.editor.edit(&source.workflow, source.reward, rng) {
                Ok(w) => (w, false),
                Err(e) => {
                    log::warn!("refinement edit failed, keeping the source: {e}");
                    (source.workflow.clone(), true)
                }
            };
            let reward = score(&workflow)?;
            let proposal = Proposal { workflow, reward, source: Some(source.id), passthrough };
            insert_proposal(pool, &proposal, round, weight);
            out.push(proposal);
        }
        Ok(out)
    }
}
