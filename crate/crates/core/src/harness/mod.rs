//! Everything between a config file on disk and a trace on disk.

mod config;
mod plot;
mod sweep;
mod trace_io;

pub use config::{
    emit_config, file_config_from_table, load_config, parse_config, parse_table, resolve, to_file_config,
    validate_with_paths, ConfigFileError, FileAdam, FileCompressor, FileConfig, FileProblem, FileTopology,
};
pub use plot::{vega_lite_spec, write_gnuplot, PlotMetric};
pub use sweep::{expand_grid, run_sweep, GridAxis, GridPoint, SweepEntry, SweepIndex};
pub use trace_io::{read_trace, read_trace_file, trace_to_bytes, write_trace, TRACE_COLUMNS};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EngineError, RunConfig, RunSummary, RunTrace, Simulation};
use crate::topology::TopologySummary;

pub const MANIFEST_FORMAT: &str = "decadam-manifest/1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    RawIo(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error("trace {trace} does not match manifest {manifest}: {what}")]
    ManifestMismatch { trace: PathBuf, manifest: PathBuf, what: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// Sidecar describing one run. The resolved config plus the binary
/// reproduce the trace byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format: String,
    pub package_version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub topology: TopologySummary,
    /// Trace file name, relative to the manifest's directory.
    pub trace_path: String,
    pub trace_sha256: String,
    pub summary: RunSummary,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    // temp files are created owner-only; results should be ordinary files
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(|e| HarnessError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Paths written by [`run_to_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: ExperimentManifest,
}

/// Run one config and write `<stem>.csv` and `<stem>.manifest.json` into `dir`.
pub fn run_to_dir(config: RunConfig, dir: &Path, stem: &str) -> Result<(RunTrace, RunOutput), HarnessError> {
    let started = now_ms();
    let trace = Simulation::new(config)?.run()?;
    let bytes = trace_to_bytes(&trace)?;
    let trace_name = format!("{stem}.csv");
    let trace_path = dir.join(&trace_name);
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    write_atomic(&trace_path, &bytes)?;
    let manifest = ExperimentManifest {
        format: MANIFEST_FORMAT.to_string(),
        package_version: trace.header.package_version.clone(),
        config: trace.header.config.clone(),
        config_hash: trace.header.config_hash.clone(),
        seed: trace.header.config.seed,
        topology: trace.header.topology.clone(),
        trace_path: trace_name,
        trace_sha256: sha256_hex(&bytes),
        summary: trace.summary,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&manifest_path, &json)?;
    Ok((trace, RunOutput { trace_path, manifest_path, manifest }))
}

pub fn read_manifest(path: &Path) -> Result<ExperimentManifest, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Check that a manifest's trace exists, hashes to the recorded digest, and
/// carries the same config hash in its header.
pub fn check_manifest(manifest_path: &Path) -> Result<ExperimentManifest, HarnessError> {
    let m = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let trace_path = dir.join(&m.trace_path);
    let bytes = std::fs::read(&trace_path).map_err(|e| HarnessError::io(&trace_path, e))?;
    let mismatch = |what: String| HarnessError::ManifestMismatch {
        trace: trace_path.clone(),
        manifest: manifest_path.to_path_buf(),
        what,
    };
    if sha256_hex(&bytes) != m.trace_sha256 {
        return Err(mismatch("sha256 differs".into()));
    }
    let trace = read_trace(&bytes[..])?;
    if trace.header.config_hash != m.config_hash {
        return Err(mismatch("config hash differs".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Algorithm;
    use crate::problems::ProblemSpec;

    fn small() -> RunConfig {
        let mut c = RunConfig::new(Algorithm::DAdam, ProblemSpec { dim: 3, ..ProblemSpec::default() });
        c.total_iters = 40;
        c.eval_every = 10;
        c
    }

    #[test]
    fn manifest_matches_trace() {
        let dir = tempfile::tempdir().unwrap();
        let (_, out) = run_to_dir(small(), dir.path(), "run").unwrap();
        let m = check_manifest(&out.manifest_path).unwrap();
        assert_eq!(m, out.manifest);
        assert_eq!(m.config_hash, crate::engine::config_hash(&m.config));
    }

    #[test]
    fn tampered_trace_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, out) = run_to_dir(small(), dir.path(), "run").unwrap();
        let mut bytes = std::fs::read(&out.trace_path).unwrap();
        bytes.push(b'\n');
        std::fs::write(&out.trace_path, bytes).unwrap();
        assert!(matches!(check_manifest(&out.manifest_path), Err(HarnessError::ManifestMismatch { .. })));
    }

    #[test]
    fn manifest_reproduces_trace() {
        let dir = tempfile::tempdir().unwrap();
        let (_, a) = run_to_dir(small(), dir.path(), "a").unwrap();
        let cfg = load_config(&a.manifest_path).unwrap();
        let (_, b) = run_to_dir(cfg, dir.path(), "b").unwrap();
        assert_eq!(std::fs::read(a.trace_path).unwrap(), std::fs::read(b.trace_path).unwrap());
    }
}
