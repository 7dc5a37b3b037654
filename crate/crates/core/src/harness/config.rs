//! TOML run configurations.
//!
//! Every key is optional and falls back to the defaults of
//! [`RunConfig::new`]. Unknown keys are rejected, and every error names the
//! dotted key path it concerns.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{CompressionError, CompressorKind, CompressorSpec};
use crate::engine::{Algorithm, ConfigError, GammaSetting, RunConfig, TopologySpec};
use crate::optimizer::{AdamHyper, HyperError, Numerator};
use crate::problems::{NoiseKind, ProblemError, ProblemKind, ProblemSpec};
use crate::topology::{TopologyKind, WeightRule};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(String),
    /// A key is unknown or holds a value of the wrong type.
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
    /// A value parsed but violates a constraint.
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("config key `{key}` holds a list; lists are grid axes and only valid for `sweep`")]
    GridKey { key: String },
    #[error("cannot emit config: {0}")]
    Emit(String),
}

impl ConfigFileError {
    /// Dotted path of the offending key, when the error concerns one key.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigFileError::Key { key, .. }
            | ConfigFileError::Invalid { key, .. }
            | ConfigFileError::GridKey { key } => Some(key),
            _ => None,
        }
    }
}

macro_rules! optional_section {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            $(
                $(#[$fmeta])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

optional_section!(FileTopology { kind: TopologyKind, workers: usize, weight_rule: WeightRule });

optional_section!(FileAdam { eta: f64, beta1: f64, beta2: f64, tau: f64 });

optional_section!(FileCompressor { kind: CompressorKind, k: usize });

optional_section!(FileProblem {
    kind: ProblemKind,
    d: usize,
    heterogeneity: f64,
    sigma: f64,
    noise: NoiseKind,
    #[serde(rename = "clip_G")]
    clip_g: f64,
    batch: usize,
    mu: f64,
    samples_per_worker: usize,
    data_seed: u64,
});

optional_section!(
    /// The on-disk shape of a run configuration.
    FileConfig {
        algorithm: Algorithm,
        total_iters: usize,
        seed: u64,
        eval_every: usize,
        period: usize,
        gamma: GammaSetting,
        numerator: Numerator,
        topology: FileTopology,
        adam: FileAdam,
        compressor: FileCompressor,
        problem: FileProblem,
    }
);

fn path_string(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        String::new()
    } else {
        s
    }
}

/// Deserialize a parsed table into [`FileConfig`], keeping key paths.
pub fn file_config_from_table(table: toml::Table) -> Result<FileConfig, ConfigFileError> {
    if let Some(key) = first_list_key(&table, "") {
        return Err(ConfigFileError::GridKey { key });
    }
    serde_path_to_error::deserialize(table).map_err(|e| {
        let key = path_string(e.path());
        ConfigFileError::Key { key, message: e.into_inner().message().to_string() }
    })
}

/// Path of the first array value, in key order.
pub(crate) fn first_list_key(table: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Array(_) => return Some(path),
            toml::Value::Table(t) => {
                if let Some(p) = first_list_key(t, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_table(text: &str) -> Result<toml::Table, ConfigFileError> {
    text.parse::<toml::Table>().map_err(|e| ConfigFileError::Syntax(e.to_string()))
}

/// Parse TOML text into a validated config.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigFileError> {
    resolve(file_config_from_table(parse_table(text)?)?)
}

/// Read a config from disk. A `.json` file is read as an experiment manifest
/// and its resolved config is returned, so a manifest reproduces its run.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigFileError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_path_buf(), source })?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: super::ExperimentManifest =
            serde_json::from_str(&text).map_err(|e| ConfigFileError::Syntax(e.to_string()))?;
        validate_with_paths(&m.config)?;
        return Ok(m.config);
    }
    parse_config(&text)
}

fn invalid(key: &str, message: impl fmt::Display) -> ConfigFileError {
    ConfigFileError::Invalid { key: key.to_string(), message: message.to_string() }
}

fn config_error_key(e: &ConfigError) -> &'static str {
    match e {
        ConfigError::Period | ConfigError::VanillaPeriod(_) => "period",
        ConfigError::TotalIters => "total_iters",
        ConfigError::EvalEvery => "eval_every",
        ConfigError::Gamma(_) => "gamma",
        ConfigError::CompressorRequired => "compressor",
        ConfigError::Hyper(h) => match h {
            HyperError::Eta(_) => "adam.eta",
            HyperError::Beta1(_) => "adam.beta1",
            HyperError::Beta2(_) => "adam.beta2",
            HyperError::Tau(_) => "adam.tau",
        },
        ConfigError::Problem(p) => match p {
            ProblemError::ZeroDim => "problem.d",
            ProblemError::Heterogeneity(_) => "problem.heterogeneity",
            ProblemError::Sigma(_) => "problem.sigma",
            ProblemError::Clip(_) => "problem.clip_G",
            ProblemError::Batch => "problem.batch",
            ProblemError::Mu(_) => "problem.mu",
            ProblemError::Samples => "problem.samples_per_worker",
            _ => "problem",
        },
        ConfigError::Compression(c) => match c {
            CompressionError::EmptyVector => "problem.d",
            CompressionError::KOutOfRange { .. } => "compressor.k",
        },
        ConfigError::Topology(_) => "topology",
    }
}

/// Run every validation, including building the topology, and attach key
/// paths to failures.
pub fn validate_with_paths(config: &RunConfig) -> Result<(), ConfigFileError> {
    config.validate().map_err(|e| invalid(config_error_key(&e), &e))?;
    config.topology.build().map_err(|e| invalid("topology", e))?;
    Ok(())
}

/// Fill defaults and validate.
///
/// A `compressor` section is required for `cd_adam` and ignored by the other
/// algorithms.
pub fn resolve(file: FileConfig) -> Result<RunConfig, ConfigFileError> {
    let algorithm = file.algorithm.unwrap_or(Algorithm::DAdam);
    let p = file.problem.unwrap_or_default();
    let defaults = ProblemSpec::default();
    let problem = ProblemSpec {
        kind: p.kind.unwrap_or(defaults.kind),
        dim: p.d.unwrap_or(defaults.dim),
        heterogeneity: p.heterogeneity.unwrap_or(defaults.heterogeneity),
        sigma: p.sigma.unwrap_or(defaults.sigma),
        noise: p.noise.unwrap_or(defaults.noise),
        clip_g: p.clip_g,
        batch: p.batch.unwrap_or(defaults.batch),
        mu: p.mu.unwrap_or(defaults.mu),
        samples_per_worker: p.samples_per_worker.unwrap_or(defaults.samples_per_worker),
        data_seed: p.data_seed,
    };
    let mut cfg = RunConfig::new(algorithm, problem);
    if let Some(v) = file.total_iters {
        cfg.total_iters = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = file.period {
        cfg.period = v;
    }
    if let Some(v) = file.gamma {
        cfg.gamma = v;
    }
    if let Some(n) = file.numerator {
        cfg.momentum_numerator = n == Numerator::Momentum;
    }
    let t = file.topology.unwrap_or_default();
    let td = TopologySpec::default();
    cfg.topology = TopologySpec {
        kind: t.kind.unwrap_or(td.kind),
        workers: t.workers.unwrap_or(td.workers),
        weight_rule: t.weight_rule.unwrap_or(td.weight_rule),
    };
    let a = file.adam.unwrap_or_default();
    let ad = AdamHyper::default();
    cfg.adam = AdamHyper {
        eta: a.eta.unwrap_or(ad.eta),
        beta1: a.beta1.unwrap_or(ad.beta1),
        beta2: a.beta2.unwrap_or(ad.beta2),
        tau: a.tau.unwrap_or(ad.tau),
    };
    cfg.compressor = match (algorithm, file.compressor) {
        (Algorithm::CdAdam, Some(FileCompressor { kind: Some(kind), k })) => Some(CompressorSpec { kind, k }),
        (Algorithm::CdAdam, _) => return Err(invalid("compressor", ConfigError::CompressorRequired)),
        _ => None,
    };
    validate_with_paths(&cfg)?;
    Ok(cfg)
}

/// The file form of a resolved config, with every key written out.
pub fn to_file_config(c: &RunConfig) -> FileConfig {
    FileConfig {
        algorithm: Some(c.algorithm),
        total_iters: Some(c.total_iters),
        seed: Some(c.seed),
        eval_every: Some(c.eval_every),
        period: Some(c.period),
        gamma: Some(c.gamma),
        numerator: Some(c.numerator()),
        topology: Some(FileTopology {
            kind: Some(c.topology.kind),
            workers: Some(c.topology.workers),
            weight_rule: Some(c.topology.weight_rule),
        }),
        adam: Some(FileAdam {
            eta: Some(c.adam.eta),
            beta1: Some(c.adam.beta1),
            beta2: Some(c.adam.beta2),
            tau: Some(c.adam.tau),
        }),
        compressor: c.compressor.map(|s| FileCompressor { kind: Some(s.kind), k: s.k }),
        problem: Some(FileProblem {
            kind: Some(c.problem.kind),
            d: Some(c.problem.dim),
            heterogeneity: Some(c.problem.heterogeneity),
            sigma: Some(c.problem.sigma),
            noise: Some(c.problem.noise),
            clip_g: c.problem.clip_g,
            batch: Some(c.problem.batch),
            mu: Some(c.problem.mu),
            samples_per_worker: Some(c.problem.samples_per_worker),
            data_seed: c.problem.data_seed,
        }),
    }
}

/// Write a resolved config as TOML. Parsing the output gives back `c`.
pub fn emit_config(c: &RunConfig) -> Result<String, ConfigFileError> {
    toml::to_string(&to_file_config(c)).map_err(|e| ConfigFileError::Emit(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> ConfigFileError {
        parse_config(text).unwrap_err()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::new(Algorithm::DAdam, ProblemSpec::default()));
        assert_eq!(c.adam.beta1, 0.9);
        assert_eq!(c.adam.beta2, 0.999);
        assert_eq!(c.adam.eta, 0.001);
    }

    #[test]
    fn gamma_defaults_and_auto() {
        let c = parse_config("algorithm = \"cd_adam\"\n[compressor]\nkind = \"scaled_sign\"\n").unwrap();
        assert_eq!(c.gamma, GammaSetting::Fixed(0.4));
        assert!(!c.momentum_numerator);
        let c =
            parse_config("algorithm = \"cd_adam\"\ngamma = \"auto\"\n[compressor]\nkind = \"top_k\"\nk = 3\n").unwrap();
        assert_eq!(c.gamma, GammaSetting::Auto);
        assert_eq!(c.compressor, Some(CompressorSpec::top_k(3)));
    }

    #[test]
    fn cd_adam_needs_a_compressor() {
        for text in ["algorithm = \"cd_adam\"\n[compressor]\n", "algorithm = \"cd_adam\"\n"] {
            let e = err(text);
            assert_eq!(e.key(), Some("compressor"));
            assert!(e.to_string().contains("compressor required"), "{e}");
        }
    }

    #[test]
    fn zero_period_is_rejected() {
        let e = err("period = 0");
        assert_eq!(e.key(), Some("period"));
        let e = err("algorithm = \"d_adam_vanilla\"\nperiod = 4");
        assert_eq!(e.key(), Some("period"));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = err("[problem]\nsigmaa = 0.1\n");
        assert!(matches!(e, ConfigFileError::Key { .. }));
        assert!(e.to_string().contains("problem"), "{e}");
        assert!(e.to_string().contains("sigmaa"), "{e}");
        let e = err("colour = 1\n");
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn type_errors_name_path_and_type() {
        let e = err("[adam]\neta = \"fast\"\n");
        assert_eq!(e.key(), Some("adam.eta"));
        assert!(e.to_string().contains("f64"), "{e}");
        let e = err("[topology]\nworkers = -3\n");
        assert_eq!(e.key(), Some("topology.workers"));
    }

    #[test]
    fn range_errors_name_path() {
        assert_eq!(err("[adam]\ntau = 1.5\n").key(), Some("adam.tau"));
        assert_eq!(err("[problem]\nheterogeneity = 2.0\n").key(), Some("problem.heterogeneity"));
        assert_eq!(
            err("algorithm = \"cd_adam\"\ngamma = 1.5\n[compressor]\nkind = \"identity\"\n").key(),
            Some("gamma")
        );
        assert_eq!(
            err("algorithm = \"cd_adam\"\n[compressor]\nkind = \"top_k\"\nk = 99\n").key(),
            Some("compressor.k")
        );
        assert_eq!(err("[topology]\nworkers = 0\n").key(), Some("topology"));
    }

    #[test]
    fn lists_are_grid_only() {
        let e = err("[topology]\nworkers = [2, 4]\n");
        assert_eq!(e.key(), Some("topology.workers"));
    }

    #[test]
    fn syntax_errors_are_reported() {
        assert!(matches!(err("period = = 3"), ConfigFileError::Syntax(_)));
    }

    #[test]
    fn compressor_ignored_outside_cd_adam() {
        let c = parse_config("[compressor]\nkind = \"identity\"\n").unwrap();
        assert_eq!(c.compressor, None);
    }

    #[test]
    fn emit_round_trips() {
        let mut c = RunConfig::new(
            Algorithm::CdAdam,
            ProblemSpec { clip_g: Some(1.0), data_seed: Some(9), ..ProblemSpec::default() },
        );
        c.gamma = GammaSetting::Auto;
        c.adam.eta = 0.1 + 0.2;
        c.compressor = Some(CompressorSpec::random_k(4));
        let text = emit_config(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
