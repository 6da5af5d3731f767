//! Client side of the execution-worker protocol.
//!
//! Workers are separate processes that read one JSON request per line on
//! stdin and answer with one JSON response per line on stdout:
//! `{"id", "kind", "payload"}` in, `{"id", "status", "payload"}` out.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::eval::TaskExample;
use crate::reward::{ExecError, ExecOutcome, WorkflowExecutor};
use crate::workflow::Workflow;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("worker command is empty")]
    EmptyCommand,
    #[error("spawning worker: {0}")]
    Spawn(std::io::Error),
    #[error("worker protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    RunWorkflow,
    ExecCode,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub id: u64,
    pub kind: RequestKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    NoError,
    AssertionFailures,
    ExecFailure,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub id: u64,
    pub status: ExecStatus,
    #[serde(default)]
    pub payload: Value,
}

impl ExecResult {
    fn local(id: u64, status: ExecStatus, message: impl Into<String>) -> Self {
        Self { id, status, payload: json!({ "exec_fail_case": message.into() }) }
    }

    pub fn answer(&self) -> Option<&str> {
        self.payload.get("answer").and_then(Value::as_str)
    }

    pub fn cost(&self) -> f64 {
        self.payload.get("cost").and_then(Value::as_f64).unwrap_or(0.0)
    }

    pub fn fail_case(&self) -> Option<&str> {
        self.payload.get("exec_fail_case").and_then(Value::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerSpec {
    pub command: Vec<String>,
    pub time_limit: Duration,
    /// Extra wait beyond the time limit before the client gives up on the
    /// worker and restarts it.
    pub grace: Duration,
}

impl WorkerSpec {
    pub fn new(command: Vec<String>) -> Self {
        Self { command, time_limit: Duration::from_secs(60), grace: Duration::from_secs(5) }
    }
}

struct Live {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

/// One worker process, restarted on crash or hang.
pub struct SandboxClient {
    spec: WorkerSpec,
    live: Option<Live>,
    next_id: u64,
    restarts: usize,
}

impl SandboxClient {
    pub fn spawn(spec: WorkerSpec) -> Result<Self, SandboxError> {
        let mut client = Self { spec, live: None, next_id: 1, restarts: 0 };
        client.live = Some(client.start()?);
        Ok(client)
    }

    fn start(&self) -> Result<Live, SandboxError> {
        let (program, args) = self.spec.command.split_first().ok_or(SandboxError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(SandboxError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Live { child, stdin, lines })
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    fn restart(&mut self) {
        if let Some(mut old) = self.live.take() {
            let _ = old.child.kill();
            let _ = old.child.wait();
        }
        self.restarts += 1;
        match self.start() {
            Ok(live) => self.live = Some(live),
            Err(e) => log::error!("worker restart failed: {e}"),
        }
    }

    /// Sends one request and waits for its response. Worker crashes and
    /// hangs become `exec_failure` / `timeout` results; the worker is then
    /// restarted.
    pub fn request(&mut self, kind: RequestKind, payload: Value) -> ExecResult {
        let id = self.next_id;
        self.next_id += 1;
        if self.live.is_none() {
            self.restart();
        }
        let Some(live) = self.live.as_mut() else {
            return ExecResult::local(id, ExecStatus::ExecFailure, "worker unavailable");
        };
        let line = serde_json::to_string(&ExecRequest { id, kind, payload }).expect("request serialises");
        if writeln!(live.stdin, "{line}").and_then(|_| live.stdin.flush()).is_err() {
            self.restart();
            return ExecResult::local(id, ExecStatus::ExecFailure, "worker crashed");
        }
        let deadline = self.spec.time_limit + self.spec.grace;
        loop {
            match live.lines.recv_timeout(deadline) {
                Ok(line) => match serde_json::from_str::<ExecResult>(&line) {
                    Ok(res) if res.id == id => return res,
                    Ok(res) => log::warn!("dropping stale worker response {}", res.id),
                    Err(e) => log::warn!("unparseable worker line ({e}): {line}"),
                },
                Err(RecvTimeoutError::Timeout) => {
                    self.restart();
                    return ExecResult::local(id, ExecStatus::Timeout, "worker did not answer in time");
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.restart();
                    return ExecResult::local(id, ExecStatus::ExecFailure, "worker crashed");
                }
            }
        }
    }

    pub fn run_workflow(&mut self, source: &str, problem: &str) -> ExecResult {
        let limit = self.spec.time_limit.as_secs_f64();
        self.request(RequestKind::RunWorkflow, json!({ "source": source, "problem": problem, "time_limit": limit }))
    }

    pub fn exec_code(&mut self, source: &str, entry_point: &str, public_tests: &[String]) -> ExecResult {
        let limit = self.spec.time_limit.as_secs_f64();
        self.request(
            RequestKind::ExecCode,
            json!({ "source": source, "entry_point": entry_point, "public_tests": public_tests, "time_limit": limit }),
        )
    }

    /// Asks the worker to exit and waits for it.
    pub fn shutdown(mut self) {
        if let Some(mut live) = self.live.take() {
            let line = serde_json::to_string(&ExecRequest { id: self.next_id, kind: RequestKind::Shutdown, payload: Value::Null })
                .expect("request serialises");
            let _ = writeln!(live.stdin, "{line}");
            drop(live.stdin);
            let _ = live.child.wait();
        }
    }
}

impl Drop for SandboxClient {
    fn drop(&mut self) {
        if let Some(mut live) = self.live.take() {
            let _ = live.child.kill();
            let _ = live.child.wait();
        }
    }
}

/// A fixed set of workers shared by reward evaluations.
pub struct SandboxPool {
    idle: Mutex<Vec<SandboxClient>>,
    ready: Condvar,
}

impl SandboxPool {
    pub fn spawn(spec: WorkerSpec, size: usize) -> Result<Self, SandboxError> {
        let idle = (0..size.max(1)).map(|_| SandboxClient::spawn(spec.clone())).collect::<Result<_, _>>()?;
        Ok(Self { idle: Mutex::new(idle), ready: Condvar::new() })
    }

    pub fn with_client<R>(&self, f: impl FnOnce(&mut SandboxClient) -> R) -> R {
        let mut client = {
            let mut idle = self.idle.lock().unwrap();
            loop {
                if let Some(c) = idle.pop() {
                    break c;
                }
                idle = self.ready.wait(idle).unwrap();
            }
        };
        let out = f(&mut client);
        self.idle.lock().unwrap().push(client);
        self.ready.notify_one();
        out
    }
}

/// Maps a `run_workflow` result onto the reward module's failure policy.
/// Failures while loading the workflow disqualify it; anything else only
/// loses the one example.
pub fn outcome_of(res: &ExecResult) -> Result<ExecOutcome, ExecError> {
    match res.status {
        ExecStatus::NoError => Ok(ExecOutcome { answer: res.answer().unwrap_or_default().to_string(), cost: res.cost() }),
        ExecStatus::ExecFailure if res.payload.get("stage").and_then(Value::as_str) == Some("load") => {
            Err(ExecError::Unexecutable(res.fail_case().unwrap_or_default().to_string()))
        }
        ExecStatus::Timeout => Err(ExecError::Example("timeout".into())),
        _ => Err(ExecError::Example(res.fail_case().unwrap_or("execution failed").to_string())),
    }
}

impl WorkflowExecutor for SandboxPool {
    fn run(&self, w: &Workflow, example: &TaskExample) -> Result<ExecOutcome, ExecError> {
        let source = w.render();
        let res = self.with_client(|c| c.run_workflow(&source, &example.question));
        outcome_of(&res)
    }
}
