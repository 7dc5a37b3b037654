//! The simulation loop.
//!
//! Every worker runs a local adaptive step and, every `p` iterations, a
//! communication phase: plain gossip (`d_adam`, `d_adam_vanilla`, `d_psgd`)
//! or a compressed exchange of hat-variable increments (`cd_adam`).

mod run;
mod step;

pub use run::{config_hash, run, RunSummary, RunTrace, Simulation, TraceHeader, TraceRow, TRACE_FORMAT};
pub use step::{
    check_replica_coherence, compressed_round, gossip_round, is_comm_round, local_phase, step, step_cd_adam,
    step_d_adam, step_d_psgd, StepContext, StepOutcome, Streams, WorkerState,
};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::compression::{CompressionError, CompressorSpec};
use crate::optimizer::{AdamHyper, HyperError, Numerator};
use crate::problems::{ProblemError, ProblemSpec};
use crate::topology::{Topology, TopologyError, TopologyKind, WeightRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Decentralized Adam with periodic gossip.
    DAdam,
    /// Decentralized Adam with compressed hat-variable exchange.
    CdAdam,
    /// Decentralized SGD with periodic gossip.
    DPsgd,
    /// Decentralized Adam gossiping every iteration.
    DAdamVanilla,
}

impl Algorithm {
    /// Numerator used when the config does not say: the first moment for
    /// `d_adam`, the raw gradient for `cd_adam`.
    pub fn default_numerator(self) -> Numerator {
        match self {
            Algorithm::CdAdam => Numerator::Gradient,
            _ => Numerator::Momentum,
        }
    }

    pub fn is_adaptive(self) -> bool {
        self != Algorithm::DPsgd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub workers: usize,
    #[serde(default)]
    pub weight_rule: WeightRule,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self { kind: TopologyKind::Ring, workers: 8, weight_rule: WeightRule::UniformNeighbor }
    }
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, TopologyError> {
        crate::topology::build_topology(self.kind, self.workers, self.weight_rule)
    }
}

/// Consensus step size for `cd_adam`: a fixed value or the stability value
/// `rho delta / (16 rho + rho^2 + 4 beta^2 + 2 rho beta^2 - 8 rho delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSetting {
    Fixed(f64),
    Auto,
}

impl Default for GammaSetting {
    fn default() -> Self {
        GammaSetting::Fixed(0.4)
    }
}

impl Serialize for GammaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaSetting::Fixed(v) => s.serialize_f64(*v),
            GammaSetting::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = GammaSetting;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number in (0, 1] or \"auto\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<GammaSetting, E> {
                Ok(GammaSetting::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<GammaSetting, E> {
                Ok(GammaSetting::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<GammaSetting, E> {
                Ok(GammaSetting::Fixed(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<GammaSetting, E> {
                match v {
                    "auto" => Ok(GammaSetting::Auto),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// `gamma = rho delta / (16 rho + rho^2 + 4 beta^2 + 2 rho beta^2 - 8 rho delta)`
/// with `beta = max_i (1 - lambda_i)`.
pub fn stability_gamma(rho: f64, delta: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    rho * delta / (16.0 * rho + rho * rho + 4.0 * b2 + 2.0 * rho * b2 - 8.0 * rho * delta)
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub total_iters: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Communication period `p`.
    pub period: usize,
    pub gamma: GammaSetting,
    /// Whether the local step uses the first moment (true) or the raw
    /// gradient (false) in its numerator.
    pub momentum_numerator: bool,
    pub topology: TopologySpec,
    pub adam: AdamHyper,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressor: Option<CompressorSpec>,
    pub problem: ProblemSpec,
}

impl RunConfig {
    /// A config with every default filled in for the given algorithm.
    pub fn new(algorithm: Algorithm, problem: ProblemSpec) -> Self {
        Self {
            algorithm,
            total_iters: 1000,
            seed: 0,
            eval_every: 100,
            period: 1,
            gamma: GammaSetting::default(),
            momentum_numerator: algorithm.default_numerator() == Numerator::Momentum,
            topology: TopologySpec::default(),
            adam: AdamHyper::default(),
            compressor: (algorithm == Algorithm::CdAdam).then_some(CompressorSpec::SCALED_SIGN),
            problem,
        }
    }

    pub fn numerator(&self) -> Numerator {
        if self.momentum_numerator {
            Numerator::Momentum
        } else {
            Numerator::Gradient
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period == 0 {
            return Err(ConfigError::Period);
        }
        if self.algorithm == Algorithm::DAdamVanilla && self.period != 1 {
            return Err(ConfigError::VanillaPeriod(self.period));
        }
        if self.total_iters == 0 {
            return Err(ConfigError::TotalIters);
        }
        if self.eval_every == 0 {
            return Err(ConfigError::EvalEvery);
        }
        self.adam.validate()?;
        self.problem.validate()?;
        if self.algorithm == Algorithm::CdAdam {
            let c = self.compressor.ok_or(ConfigError::CompressorRequired)?;
            c.validate(self.problem.dim)?;
            if let GammaSetting::Fixed(g) = self.gamma {
                if !(g > 0.0 && g <= 1.0) {
                    return Err(ConfigError::Gamma(g));
                }
            }
        }
        if self.topology.workers == 0 {
            return Err(ConfigError::Topology(TopologyError::NoWorkers));
        }
        Ok(())
    }

    /// Numeric `gamma` for this config on the given topology.
    pub fn resolved_gamma(&self, topology: &Topology) -> Option<f64> {
        if self.algorithm != Algorithm::CdAdam {
            return None;
        }
        Some(match self.gamma {
            GammaSetting::Fixed(g) => g,
            GammaSetting::Auto => {
                let delta = self.compressor.map_or(1.0, |c| c.guaranteed_delta(self.problem.dim));
                stability_gamma(topology.spectral_gap(), delta, topology.laplacian_norm())
            }
        })
    }

    /// Number of communication rounds in a full run: `floor(T / p)`.
    pub fn comm_rounds(&self) -> usize {
        self.total_iters / self.period
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("period must be at least 1")]
    Period,
    #[error("d_adam_vanilla communicates every iteration; period {0} is not allowed")]
    VanillaPeriod(usize),
    #[error("total_iters must be at least 1")]
    TotalIters,
    #[error("eval_every must be at least 1")]
    EvalEvery,
    #[error("gamma must lie in (0, 1], got {0}")]
    Gamma(f64),
    #[error("compressor required for cd_adam")]
    CompressorRequired,
    #[error(transparent)]
    Hyper(#[from] HyperError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error("non-finite value at iteration {iteration} on worker {worker}")]
    NonFinite { iteration: usize, worker: usize },
    #[error("replica of worker {neighbor}'s hat-variable held by worker {worker} diverged at iteration {iteration}")]
    ReplicaIncoherent { iteration: usize, worker: usize, neighbor: usize },
    #[error("topology has {topology} workers but the problem has {problem}")]
    WorkerMismatch { topology: usize, problem: usize },
    #[error("problem dimension {problem} does not match configured d = {config}")]
    DimMismatch { problem: usize, config: usize },
}
