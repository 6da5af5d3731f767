//! Record/replay of chat-completions traffic.
//!
//! Cassettes are JSON lines of `{digest, request, response}`, keyed by the
//! SHA-256 of the canonical request body.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::transport::{Transport, TransportError, TransportResponse};
use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub request: Value,
    pub response: TransportResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Record,
    Replay,
}

/// Digest of a request body. `serde_json` maps keep keys sorted, so equal
/// requests serialize identically.
pub fn request_digest(body: &Value) -> String {
    let bytes = serde_json::to_vec(body).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn read_cassette(path: impl AsRef<Path>) -> Result<Vec<CassetteEntry>, GatewayError> {
    let file = File::open(path.as_ref())?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Cassette(format!("line {}: {e}", n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Forwards to an inner transport and appends each new successful exchange.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    path: PathBuf,
    state: Mutex<(HashSet<String>, File)>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let seen: HashSet<String> = if path.exists() {
            read_cassette(&path)?.into_iter().map(|e| e.digest).collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { inner, path, state: Mutex::new((seen, file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Transport for RecordingTransport {
    fn post(&self, body: &Value, timeout: Duration) -> Result<TransportResponse, TransportError> {
        let response = self.inner.post(body, timeout)?;
        if response.is_success() {
            let digest = request_digest(body);
            let mut guard = self.state.lock().unwrap();
            let (seen, file) = &mut *guard;
            if seen.insert(digest.clone()) {
                let entry = CassetteEntry { digest, request: body.clone(), response: response.clone() };
                let mut line = serde_json::to_string(&entry).expect("entry serializes");
                line.push('\n');
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .map_err(|e| TransportError::Other(format!("writing cassette: {e}")))?;
            }
        }
        Ok(response)
    }
}

/// Serves recorded responses; never touches the network.
pub struct ReplayTransport {
    entries: HashMap<String, CassetteEntry>,
    hits: Mutex<HashMap<String, usize>>,
}

impl ReplayTransport {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(read_cassette(path)?))
    }

    pub fn from_entries(entries: Vec<CassetteEntry>) -> Self {
        let entries = entries.into_iter().map(|e| (e.digest.clone(), e)).collect();
        Self { entries, hits: Mutex::new(HashMap::new()) }
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.values()
    }

    /// How many times each digest has been served.
    pub fn hits(&self) -> HashMap<String, usize> {
        self.hits.lock().unwrap().clone()
    }
}

impl Transport for ReplayTransport {
    fn post(&self, body: &Value, _timeout: Duration) -> Result<TransportResponse, TransportError> {
        let digest = request_digest(body);
        match self.entries.get(&digest) {
            Some(entry) => {
                *self.hits.lock().unwrap().entry(digest).or_default() += 1;
                Ok(entry.response.clone())
            }
            None => Err(TransportError::CassetteMiss(digest)),
        }
    }
}

/// Wraps `inner` for recording, or opens the cassette for replay (in which
/// case `inner` is never used).
pub fn record_replay(
    mode: CassetteMode,
    path: impl Into<PathBuf>,
    inner: Option<Arc<dyn Transport>>,
) -> Result<Arc<dyn Transport>, GatewayError> {
    let path = path.into();
    match mode {
        CassetteMode::Record => {
            let inner = inner.ok_or_else(|| {
                GatewayError::Cassette("record mode needs an upstream transport".into())
            })?;
            Ok(Arc::new(RecordingTransport::new(inner, path)?))
        }
        CassetteMode::Replay => Ok(Arc::new(ReplayTransport::open(path)?)),
    }
}
