use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{check_extendable, PriorError, PriorModel};
use crate::gateway::{ChatRequest, Gateway};
use crate::workflow::{marker_offsets, parse_annotated, Step, Workflow};

/// Appended to every self-correction prompt.
pub const NO_TRY_EXCEPT: &str =
    "Do not use any try-except blocks. Fix the root cause rather than catching it.";

/// Output-format rules shared by generation, continuation and edit prompts.
/// `{horizon}` is substituted with the step budget.
pub const STEP_FORMAT_RULES: &str = "Write the workflow as Python code. Before every major \
block, write a comment line of the form `# Step <n>:` followed by a short description, numbering \
steps from 1. Use at most {horizon} steps. Output only code, without explanations or markdown fences.";

/// Reply that ends a workflow early during one-step continuation.
const DONE: &str = "DONE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmPriorConfig {
    /// Task description the workflows must solve.
    pub task: String,
    pub agent_role: String,
    /// Temperature for one-step extensions.
    pub extend_temperature: f64,
    /// Temperature for look-ahead completions.
    pub rollout_temperature: f64,
    /// Temperature for from-scratch generation.
    pub generate_temperature: f64,
    pub max_attempts: usize,
    pub horizon: usize,
}

impl Default for LlmPriorConfig {
    fn default() -> Self {
        Self {
            task: String::new(),
            agent_role: "workflow designer who writes agentic LLM workflows in Python".into(),
            extend_temperature: 0.8,
            rollout_temperature: 0.8,
            generate_temperature: 0.0,
            max_attempts: 3,
            horizon: crate::workflow::DEFAULT_HORIZON,
        }
    }
}

/// Optional post-parse check (e.g. sandbox execution) that feeds its error
/// log back into self-correction.
pub trait WorkflowCheck: Send + Sync {
    fn check(&self, w: &Workflow) -> Result<(), String>;
}

/// Prior realised by prompting the meta-optimizer model.
pub struct LlmPrior {
    gateway: Arc<Gateway>,
    config: LlmPriorConfig,
    check: Option<Arc<dyn WorkflowCheck>>,
}

impl LlmPrior {
    pub fn new(gateway: Arc<Gateway>, config: LlmPriorConfig) -> Self {
        Self { gateway, config, check: None }
    }

    pub fn with_check(mut self, check: Arc<dyn WorkflowCheck>) -> Self {
        self.check = Some(check);
        self
    }

    pub fn config(&self) -> &LlmPriorConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn format_rules(&self, horizon: usize) -> String {
        STEP_FORMAT_RULES.replace("{horizon}", &horizon.to_string())
    }

    fn request(&self, prompt: String, temperature: f64) -> ChatRequest {
        ChatRequest::new(vec![prompt], temperature, 1)
            .role(self.config.agent_role.clone())
            .instructions(self.format_rules(self.config.horizon))
    }

    fn ask(&self, prompt: String, temperature: f64) -> Result<String, PriorError> {
        let mut replies = self.gateway.call_llm(&self.request(prompt, temperature))?;
        Ok(replies.pop().unwrap_or_default())
    }

    /// Generates a complete workflow for `context`, re-prompting with the
    /// captured error log until one parses (and passes the attached check).
    pub fn generate_with_self_correction(
        &self,
        context: &str,
        error_log: Option<&str>,
    ) -> Result<Workflow, PriorError> {
        let horizon = self.config.horizon;
        self.self_correct(context, error_log, self.config.generate_temperature, |reply| {
            let w = parse_annotated(reply, horizon).map_err(|e| e.to_string())?;
            if let Some(check) = &self.check {
                check.check(&w)?;
            }
            Ok(w)
        })
    }

    /// Prompts with `context`, retrying on `accept` failures with the error
    /// log and the no-try-except instruction appended.
    fn self_correct<T>(
        &self,
        context: &str,
        initial_error: Option<&str>,
        temperature: f64,
        mut accept: impl FnMut(&str) -> Result<T, String>,
    ) -> Result<T, PriorError> {
        let attempts = self.config.max_attempts.max(1);
        let mut error_log = initial_error.map(str::to_string);
        for _ in 0..attempts {
            let prompt = correction_prompt(context, error_log.as_deref());
            let reply = self.ask(prompt, temperature)?;
            match accept(&reply) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("self-correction: {e}");
                    error_log = Some(e);
                }
            }
        }
        Err(PriorError::SelfCorrectionExhausted {
            attempts,
            last_error: error_log.unwrap_or_default(),
        })
    }

    fn base_prompt(&self) -> String {
        format!("Task:\n{}\n", self.config.task)
    }

    pub fn generation_prompt(&self) -> String {
        format!("{}\nWrite a complete workflow that solves this task.", self.base_prompt())
    }

    fn extend_prompt(&self, prefix: &Workflow) -> String {
        let n = prefix.len() + 1;
        format!(
            "{}\nPartial workflow so far:\n{}\n\nContinue this partial workflow by exactly one step. \
             Output only the new step, starting with the line `# Step {n}:`, then stop. \
             If the workflow is already finished, output exactly {DONE}.",
            self.base_prompt(),
            render_or_placeholder(prefix),
        )
    }

    fn rollout_prompt(&self, prefix: &Workflow) -> String {
        let n = prefix.len() + 1;
        format!(
            "{}\nPartial workflow so far:\n{}\n\nComplete this workflow. Keep the existing steps \
             unchanged and output only the remaining steps, starting from `# Step {n}:`, using at \
             most {} more steps. If nothing remains to be done, output exactly {DONE}.",
            self.base_prompt(),
            render_or_placeholder(prefix),
            self.config.horizon - prefix.len(),
        )
    }
}

fn render_or_placeholder(w: &Workflow) -> String {
    if w.real_len() == 0 {
        "(empty)".to_string()
    } else {
        w.render()
    }
}

pub(crate) fn correction_prompt(context: &str, error_log: Option<&str>) -> String {
    match error_log {
        None => context.to_string(),
        Some(log) => format!(
            "{context}\n\nYour previous attempt failed with this error log:\n{log}\n\n\
             Emit a corrected version. {NO_TRY_EXCEPT}"
        ),
    }
}

fn is_done(reply: &str) -> bool {
    reply.trim() == DONE
}

/// First step chunk of a continuation reply.
fn first_step(reply: &str) -> Result<String, String> {
    let offsets = marker_offsets(reply);
    let Some(&start) = offsets.first() else {
        return Err(format!("reply has no `# Step <n>:` marker:\n{}", snippet(reply)));
    };
    let end = offsets.get(1).copied().unwrap_or(reply.len());
    Ok(reply[start..end].to_string())
}

fn snippet(s: &str) -> String {
    s.chars().take(400).collect()
}

impl PriorModel for LlmPrior {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn extend_one(&self, prefix: &Workflow, _rng: &mut dyn RngCore) -> Result<Step, PriorError> {
        check_extendable(prefix, self.config.horizon)?;
        let index = prefix.len() + 1;
        if prefix.has_ended() {
            return Ok(Step { index, text: String::new() });
        }
        let prompt = self.extend_prompt(prefix);
        let text = self.self_correct(&prompt, None, self.config.extend_temperature, |reply| {
            if is_done(reply) {
                Ok(String::new())
            } else {
                first_step(reply)
            }
        })?;
        Ok(Step { index, text })
    }

    fn rollout(&self, prefix: &Workflow, _rng: &mut dyn RngCore) -> Result<Workflow, PriorError> {
        if prefix.is_complete() && prefix.horizon() == self.config.horizon {
            return Ok(prefix.clone());
        }
        check_extendable(prefix, self.config.horizon)?;
        if prefix.has_ended() {
            return Ok(prefix.clone().padded());
        }
        let remaining = self.config.horizon - prefix.len();
        let prompt = self.rollout_prompt(prefix);
        let suffix = self.self_correct(&prompt, None, self.config.rollout_temperature, |reply| {
            if is_done(reply) {
                return Ok(Vec::new());
            }
            let tail = parse_annotated(reply, remaining).map_err(|e| {
                format!("{e} (at most {remaining} steps allowed):\n{}", snippet(reply))
            })?;
            Ok(tail.steps().iter().filter(|s| !s.is_padding()).cloned().collect::<Vec<_>>())
        })?;
        Ok(prefix.concat(&suffix)?.padded())
    }
}
