//! On-disk run artifacts, written as the run progresses so a failed run
//! still leaves a usable partial archive.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PoolEntry, SmcError};

/// Per-round diagnostics, one line of `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Particles carried into the next round.
    pub n: usize,
    /// Augmented pool size before resampling.
    pub pool: usize,
    pub ess: f64,
    /// Reward statistics over this round's complete workflows.
    pub min_reward: f64,
    pub mean_reward: f64,
    pub max_reward: f64,
    /// Largest over smallest particle look-ahead value.
    pub lookahead_ratio: f64,
}

pub struct RunArtifacts {
    dir: PathBuf,
    archive: BufWriter<File>,
    rounds: BufWriter<File>,
}

impl RunArtifacts {
    /// Creates `dir`, writes `config.json` and truncates the line files.
    pub fn create<C: Serialize>(dir: impl Into<PathBuf>, config: &C) -> Result<Self, SmcError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut cfg = serde_json::to_string_pretty(config)?;
        cfg.push('\n');
        fs::write(dir.join("config.json"), cfg)?;
        Ok(Self {
            archive: BufWriter::new(File::create(dir.join("archive.jsonl"))?),
            rounds: BufWriter::new(File::create(dir.join("rounds.jsonl"))?),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_entry(&mut self, entry: &PoolEntry) -> Result<(), SmcError> {
        serde_json::to_writer(&mut self.archive, entry)?;
        self.archive.write_all(b"\n")?;
        Ok(())
    }

    pub fn append_round(&mut self, stats: &RoundStats) -> Result<(), SmcError> {
        serde_json::to_writer(&mut self.rounds, stats)?;
        self.rounds.write_all(b"\n")?;
        self.flush()
    }

    pub fn write_best(&mut self, best: &PoolEntry) -> Result<(), SmcError> {
        let mut text = best.workflow.render();
        text.push('\n');
        fs::write(self.dir.join("best.txt"), text)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), SmcError> {
        self.archive.flush()?;
        self.rounds.flush()?;
        Ok(())
    }
}

impl Drop for RunArtifacts {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Reads an `archive.jsonl` back.
pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<PoolEntry>, SmcError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
