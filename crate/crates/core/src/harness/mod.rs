//! Pipeline front end: scoring a token set, simulating the curriculum,
//! summarising score files and generating fixtures. The CLI is a thin layer
//! over these functions.

mod config;
mod score;
mod simulate;
mod stats;

pub use config::WarmupConfig;
pub use score::{
    cmd_score, resolve_k, score_embeddings, ScoreOptions, ScoreOutcome, ScoreSummary, ScoredDataset,
};
pub use simulate::{
    cmd_simulate, simulate, ProfileBin, SimulateOptions, SimulationReport, TraceRow, TRACE_HEADER,
};
pub use stats::{cmd_stats, pearson, quantile, ClusterExemplars, StatsReport};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embeddings::write_embeddings;
use crate::synth::{generate_synthetic, write_truth, SyntheticSpec};

/// Broad failure class; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    /// Input files parse but violate format or value invariants.
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Data => 4,
            ErrorKind::Numeric => 5,
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct HarnessError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl HarnessError {
    pub fn new(
        kind: ErrorKind,
        stage: &'static str,
        source: impl Into<Box<dyn std::error::Error + Send + Sync>>,
    ) -> Self {
        Self {
            kind,
            stage,
            source: source.into(),
        }
    }

    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, stage, message.into())
    }

    pub fn io(stage: &'static str, path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, stage, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

pub(crate) fn open_reader(
    stage: &'static str,
    path: &Path,
) -> Result<BufReader<File>, HarnessError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| HarnessError::io(stage, path, e))
}

pub(crate) fn create_writer(
    stage: &'static str,
    path: &Path,
) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(stage, path, e))
}

/// Sidecar path for a fixture: `toy.tokemb` → `toy.truth.jsonl`.
pub fn truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.jsonl")
}

/// Writes a synthetic `.tokemb` fixture and its `.truth.jsonl` sidecar.
pub fn cmd_synth(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<PathBuf, HarnessError> {
    let (set, truth) = generate_synthetic(spec, seed)
        .map_err(|e| HarnessError::new(ErrorKind::Config, "synth", e))?;
    let sidecar = truth_path(out);
    let write = || -> Result<(), HarnessError> {
        write_embeddings(&set, create_writer("synth", out)?)
            .map_err(|e| HarnessError::new(ErrorKind::Io, "synth", e))?;
        write_truth(&truth, create_writer("synth", &sidecar)?)
            .map_err(|e| HarnessError::new(ErrorKind::Io, "synth", e))
    };
    write().inspect_err(|_| {
        let _ = std::fs::remove_file(out);
        let _ = std::fs::remove_file(&sidecar);
    })?;
    Ok(sidecar)
}

/// Reads a synthetic spec from JSON.
pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec, HarnessError> {
    serde_json::from_reader(open_reader("synth", path)?)
        .map_err(|e| HarnessError::config("synth", format!("{}: {e}", path.display())))
}
