use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::step::{step, StepContext, StepOutcome, Streams, WorkerState};
use super::{Algorithm, EngineError, RunConfig};
use crate::compression::CompressorSpec;
use crate::optimizer::Numerator;
use crate::problems::{make_heterogeneous, Problem};
use crate::topology::{Topology, TopologySummary};
use crate::vecops::{consensus_error, norm_sq, shifted_mean};

pub const TRACE_FORMAT: &str = "decadam-trace/1";

/// One evaluation row. Column order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub loss_avg_iterate: f64,
    pub grad_norm_sq_avg_iterate: f64,
    pub consensus_err: f64,
    pub comm_bits_cum: u64,
    pub comm_rounds_cum: u64,
}

/// Metadata written at the top of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub package_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub topology: TopologySummary,
    pub smoothness: f64,
    #[serde(default)]
    pub f_star: Option<f64>,
    /// Numeric consensus step size actually used (compressed exchange only).
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Step numerator actually used (adaptive algorithms only).
    #[serde(default)]
    pub numerator: Option<Numerator>,
    #[serde(default)]
    pub compressor: Option<CompressorSpec>,
    #[serde(default)]
    pub compressor_delta: Option<f64>,
    /// Whether bounded variance holds exactly (no clipping) or the oracle is
    /// clipped and therefore biased.
    pub variance_assumption: String,
    /// Whether the gradient bound is enforced by clipping or only observed.
    pub gradient_bound_assumption: String,
}

/// Quantities accumulated over every iteration, not only at evaluation rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub comm_rounds: u64,
    pub comm_bits: u64,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    /// `(1/T) sum_{t<T} ||grad f(xbar_t)||^2`.
    pub avg_grad_norm_sq: f64,
    /// `max_t sum_k ||x_t^k - xbar_t||^2`.
    pub max_consensus_err: f64,
    /// Largest stochastic-gradient component magnitude seen.
    pub g_hat: f64,
    /// Smallest contraction factor realized by the compressor during the run.
    #[serde(default)]
    pub observed_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

/// SHA-256 of the canonical JSON encoding of a config.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// A single run in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: RunConfig,
    topology: Topology,
    problem: Problem,
    gamma: Option<f64>,
    workers: Vec<WorkerState>,
    streams: Streams,
    t: usize,
    comm_bits: u64,
    comm_rounds: u64,
    g_hat: f64,
    grad_norm_sum: f64,
    max_consensus: f64,
    min_delta: Option<f64>,
}

impl Simulation {
    /// Build topology and problem from the config.
    pub fn new(config: RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let topology = config.topology.build()?;
        let data_seed = config.problem.data_seed.unwrap_or(config.seed);
        let problem = make_heterogeneous(&config.problem, config.topology.workers, data_seed)?;
        Self::with_parts(config, topology, problem)
    }

    /// Use an explicit topology and problem. The config's topology and
    /// problem sections are then descriptive only.
    pub fn with_parts(config: RunConfig, topology: Topology, problem: Problem) -> Result<Self, EngineError> {
        config.validate()?;
        let k = topology.num_workers();
        if problem.num_workers() != k {
            return Err(EngineError::WorkerMismatch { topology: k, problem: problem.num_workers() });
        }
        if problem.dim() != config.problem.dim {
            return Err(EngineError::DimMismatch { problem: problem.dim(), config: config.problem.dim });
        }
        let x0 = vec![0.0; problem.dim()];
        let workers = WorkerState::initial(config.algorithm, &topology, &x0);
        let gamma = config.resolved_gamma(&topology);
        let streams = Streams::new(config.seed, k);
        Ok(Self {
            config,
            topology,
            problem,
            gamma,
            workers,
            streams,
            t: 0,
            comm_bits: 0,
            comm_rounds: 0,
            g_hat: 0.0,
            grad_norm_sum: 0.0,
            max_consensus: 0.0,
            min_delta: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn comm_bits(&self) -> u64 {
        self.comm_bits
    }

    pub fn comm_rounds(&self) -> u64 {
        self.comm_rounds
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn average_iterate(&self) -> Vec<f64> {
        let xs: Vec<Vec<f64>> = self.workers.iter().map(|w| w.x.clone()).collect();
        shifted_mean(&xs)
    }

    fn eval(&self) -> (Vec<f64>, f64, f64, f64) {
        let xs: Vec<Vec<f64>> = self.workers.iter().map(|w| w.x.clone()).collect();
        let xbar = shifted_mean(&xs);
        let loss = self.problem.value(&xbar);
        let gn = norm_sq(&self.problem.gradient(&xbar));
        let ce = consensus_error(&xs, &xbar);
        (xbar, loss, gn, ce)
    }

    fn row(&self) -> TraceRow {
        let (_, loss, gn, ce) = self.eval();
        TraceRow {
            t: self.t,
            loss_avg_iterate: loss,
            grad_norm_sq_avg_iterate: gn,
            consensus_err: ce,
            comm_bits_cum: self.comm_bits,
            comm_rounds_cum: self.comm_rounds,
        }
    }

    /// Advance one iteration.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        let xs: Vec<Vec<f64>> = self.workers.iter().map(|w| w.x.clone()).collect();
        let xbar = shifted_mean(&xs);
        self.grad_norm_sum += norm_sq(&self.problem.gradient(&xbar));

        let ctx = StepContext {
            algorithm: self.config.algorithm,
            hyper: self.config.adam,
            numerator: self.config.numerator(),
            period: self.config.period,
            gamma: self.gamma.unwrap_or(0.0),
            compressor: self.config.compressor,
            topology: &self.topology,
            problem: &self.problem,
        };
        let out = step(&mut self.workers, self.t, &ctx, &mut self.streams)?;
        for g in &out.gradients {
            self.g_hat = g.iter().fold(self.g_hat, |m, v| m.max(v.abs()));
        }
        if out.communicated {
            self.comm_rounds += 1;
            self.comm_bits += out.bits;
        }
        if let Some(d) = out.min_delta {
            self.min_delta = Some(self.min_delta.map_or(d, |m| m.min(d)));
        }
        self.t += 1;

        let xs: Vec<Vec<f64>> = self.workers.iter().map(|w| w.x.clone()).collect();
        let ce = consensus_error(&xs, &shifted_mean(&xs));
        self.max_consensus = self.max_consensus.max(ce);
        Ok(out)
    }

    pub fn header(&self) -> TraceHeader {
        let c = &self.config;
        let (variance, bound) = match self.problem.clip_g() {
            Some(_) => ("empirical (clipped oracle is biased)", "exact (clip_G)"),
            None => ("exact", "empirical (max observed |g_j|)"),
        };
        let compressor = (c.algorithm == Algorithm::CdAdam).then_some(c.compressor).flatten();
        TraceHeader {
            format: TRACE_FORMAT.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(c),
            config: c.clone(),
            topology: self.topology.summary(),
            smoothness: self.problem.smoothness(),
            f_star: self.problem.f_star(),
            gamma: self.gamma,
            numerator: c.algorithm.is_adaptive().then(|| c.numerator()),
            compressor,
            compressor_delta: compressor.map(|s| s.guaranteed_delta(c.problem.dim)),
            variance_assumption: variance.to_string(),
            gradient_bound_assumption: bound.to_string(),
        }
    }

    /// Run the remaining iterations and collect the trace.
    pub fn run(mut self) -> Result<RunTrace, EngineError> {
        let total = self.config.total_iters;
        let every = self.config.eval_every;
        let mut rows = vec![self.row()];
        while self.t < total {
            self.step()?;
            if self.t % every == 0 || self.t == total {
                rows.push(self.row());
            }
        }
        let (_, final_loss, final_gn, _) = self.eval();
        let summary = RunSummary {
            iterations: self.t,
            comm_rounds: self.comm_rounds,
            comm_bits: self.comm_bits,
            final_loss,
            final_grad_norm_sq: final_gn,
            avg_grad_norm_sq: self.grad_norm_sum / self.t.max(1) as f64,
            max_consensus_err: self.max_consensus,
            g_hat: self.g_hat,
            observed_delta: self.min_delta,
        };
        Ok(RunTrace { header: self.header(), rows, summary })
    }
}

/// Build and run a config end to end.
pub fn run(config: RunConfig) -> Result<RunTrace, EngineError> {
    Simulation::new(config)?.run()
}
