//! Matrix-form reference dynamics.
//!
//! Stacks worker iterates as columns of `X` (`d x K`) and advances them with
//! whole-matrix operations:
//!
//! ```text
//! X_{t+1/2} = X_t - eta * Delta_t
//! X_{t+1}   = X_{t+1/2} P              P = W on communication rounds, else I
//! ```
//!
//! and for the compressed variant, on communication rounds,
//!
//! ```text
//! X_{t+1}    = X_{t+1/2} + gamma * Xhat_t (W - I)
//! Xhat_{t+1} = Xhat_t + Q(X_{t+1} - Xhat_t)       (column-wise Q)
//! ```
//!
//! Gradients are injected rather than sampled so the engine and this slow
//! path consume exactly the same stream.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{compress_into, CompressionError, CompressorKind, CompressorSpec};
use crate::engine::{
    is_comm_round, Algorithm, EngineError, GammaSetting, RunConfig, Simulation, Streams, TopologySpec,
};
use crate::optimizer::{AdamHyper, Numerator};
use crate::problems::{NoiseKind, ProblemKind, ProblemSpec};
use crate::rng::Stream;
use crate::topology::{TopologyKind, WeightRule};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("compressed dynamics need a hat-variable matrix")]
    MissingHat,
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Stacked state of all workers.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixIterate {
    pub x: DMatrix<f64>,
    /// `X 11^T / K`.
    pub xbar: DMatrix<f64>,
    /// Last update direction, one column per worker.
    pub delta: DMatrix<f64>,
    pub xhat: Option<DMatrix<f64>>,
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

fn averaging(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, k, 1.0 / k as f64)
}

impl MatrixIterate {
    /// Every column starts at `x0`; `with_hat` also sets `Xhat_0 = X_0`.
    pub fn new(x0: &[f64], workers: usize, with_hat: bool) -> Self {
        let d = x0.len();
        let x = DMatrix::from_fn(d, workers, |i, _| x0[i]);
        Self {
            xbar: &x * averaging(workers),
            xhat: with_hat.then(|| x.clone()),
            delta: DMatrix::zeros(d, workers),
            m: DMatrix::zeros(d, workers),
            v: DMatrix::zeros(d, workers),
            x,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn workers(&self) -> usize {
        self.x.ncols()
    }
}

fn check_shape(m: &DMatrix<f64>, expected: (usize, usize)) -> Result<(), OracleError> {
    if m.shape() != expected {
        return Err(OracleError::Shape { expected, got: m.shape() });
    }
    Ok(())
}

/// `(X_half, M, V, Delta)`.
type HalfStep = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Moment update and `X_{t+1/2}`.
fn half_step(
    state: &MatrixIterate,
    grads: &DMatrix<f64>,
    hyper: &AdamHyper,
    numerator: Numerator,
) -> Result<HalfStep, OracleError> {
    check_shape(grads, state.x.shape())?;
    let m = &state.m * hyper.beta1 + grads * (1.0 - hyper.beta1);
    let v = &state.v * hyper.beta2 + grads.component_mul(grads) * (1.0 - hyper.beta2);
    let u = match numerator {
        Numerator::Momentum => &m,
        Numerator::Gradient => grads,
    };
    let denom = v.map(|e| e.sqrt() + hyper.tau);
    let delta = u.component_div(&denom);
    let x_half = &state.x - &delta * hyper.eta;
    Ok((x_half, m, v, delta))
}

/// One matrix-form D-Adam step.
pub fn oracle_step_dadam(
    state: &MatrixIterate,
    gradients: &DMatrix<f64>,
    t: usize,
    hyper: &AdamHyper,
    numerator: Numerator,
    w: &DMatrix<f64>,
    period: usize,
) -> Result<MatrixIterate, OracleError> {
    let k = state.workers();
    check_shape(w, (k, k))?;
    let (x_half, m, v, delta) = half_step(state, gradients, hyper, numerator)?;
    let x = if is_comm_round(t, period) { &x_half * w } else { x_half };
    Ok(MatrixIterate { xbar: &x * averaging(k), x, delta, xhat: state.xhat.clone(), m, v })
}

/// One matrix-form CD-Adam step. `rngs[k]` feeds the compressor of column `k`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_step_cdadam(
    state: &MatrixIterate,
    gradients: &DMatrix<f64>,
    t: usize,
    hyper: &AdamHyper,
    numerator: Numerator,
    w: &DMatrix<f64>,
    period: usize,
    gamma: f64,
    compressor: &CompressorSpec,
    rngs: &mut [Stream],
) -> Result<MatrixIterate, OracleError> {
    let k = state.workers();
    let d = state.dim();
    check_shape(w, (k, k))?;
    let xhat = state.xhat.as_ref().ok_or(OracleError::MissingHat)?;
    let (x_half, m, v, delta) = half_step(state, gradients, hyper, numerator)?;
    let (x, xhat) = if is_comm_round(t, period) {
        let mixing = w - DMatrix::identity(k, k);
        let x = x_half + (xhat * mixing) * gamma;
        let diff = &x - xhat;
        let mut q = DMatrix::zeros(d, k);
        let mut col = vec![0.0; d];
        for (j, rng) in rngs.iter_mut().enumerate().take(k) {
            let dj: Vec<f64> = diff.column(j).iter().copied().collect();
            compress_into(compressor, &dj, &mut col, rng)?;
            q.column_mut(j).copy_from_slice(&col);
        }
        let xhat = xhat + q;
        (x, xhat)
    } else {
        (x_half, xhat.clone())
    };
    Ok(MatrixIterate { xbar: &x * averaging(k), x, delta, xhat: Some(xhat), m, v })
}

/// Largest entrywise difference, relative to the largest entry magnitude of
/// the reference matrix.
pub fn relative_discrepancy(reference: &DMatrix<f64>, other: &DMatrix<f64>) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let diff = reference.iter().zip(other.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

fn stack(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let d = cols[0].len();
    DMatrix::from_fn(d, cols.len(), |i, j| cols[j][i])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub algorithm: Algorithm,
    pub workers: usize,
    pub dim: usize,
    pub period: usize,
    pub steps: usize,
    /// Worst relative discrepancy in `X` over all steps.
    pub max_x_discrepancy: f64,
    /// Worst relative discrepancy in `Xhat` (compressed runs only).
    pub max_hat_discrepancy: f64,
    /// Worst deviation of the mean update from `-(eta/K) sum_k direction_k`.
    pub max_mean_recursion_err: f64,
}

impl EquivalenceReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_x_discrepancy <= tol && self.max_hat_discrepancy <= tol && self.max_mean_recursion_err <= tol
    }
}

/// Run the engine for `steps` iterations and replay its gradient stream
/// through the matrix form, comparing after every step.
pub fn verify_equivalence(config: &RunConfig, steps: usize) -> Result<EquivalenceReport, OracleError> {
    let mut cfg = config.clone();
    cfg.total_iters = cfg.total_iters.max(steps);
    let mut sim = Simulation::new(cfg)?;
    let k = sim.topology().num_workers();
    let d = sim.problem().dim();
    let w = sim.topology().weights().clone();
    let algo = config.algorithm;
    let compressed = algo == Algorithm::CdAdam;
    let gamma = sim.gamma().unwrap_or(0.0);
    let mut rngs = Streams::new(config.seed, k).compression;
    let mut state = MatrixIterate::new(&vec![0.0; d], k, compressed);
    let mut report = EquivalenceReport {
        algorithm: algo,
        workers: k,
        dim: d,
        period: config.period,
        steps,
        max_x_discrepancy: 0.0,
        max_hat_discrepancy: 0.0,
        max_mean_recursion_err: 0.0,
    };
    let mean_of = |m: &DMatrix<f64>| m.column_mean();
    for t in 0..steps {
        let before = mean_of(&state.x);
        let out = sim.step()?;
        let grads = stack(&out.gradients);
        state = if compressed {
            oracle_step_cdadam(
                &state,
                &grads,
                t,
                &config.adam,
                config.numerator(),
                &w,
                config.period,
                gamma,
                config.compressor.as_ref().expect("validated"),
                &mut rngs,
            )?
        } else {
            oracle_step_dadam(&state, &grads, t, &config.adam, config.numerator(), &w, config.period)?
        };
        let xs: Vec<Vec<f64>> = sim.workers().iter().map(|w| w.x.clone()).collect();
        report.max_x_discrepancy = report.max_x_discrepancy.max(relative_discrepancy(&state.x, &stack(&xs)));
        if let Some(h) = &state.xhat {
            let hats: Vec<Vec<f64>> = sim.workers().iter().map(|w| w.x_hat_self.clone().unwrap()).collect();
            report.max_hat_discrepancy = report.max_hat_discrepancy.max(relative_discrepancy(h, &stack(&hats)));
        }
        let expected = before - mean_of(&stack(&out.directions)) * config.adam.eta;
        let after = mean_of(&state.x);
        let scale = after.amax().max(f64::MIN_POSITIVE);
        report.max_mean_recursion_err = report.max_mean_recursion_err.max((after - expected).amax() / scale);
    }
    Ok(report)
}

/// A random small configuration for equivalence testing: `K <= 8`, `d <= 32`,
/// `p in {1, 2, 4}`, D-Adam or CD-Adam.
pub fn random_equivalence_config(rng: &mut Stream) -> RunConfig {
    let algorithm = if rng.random::<bool>() { Algorithm::DAdam } else { Algorithm::CdAdam };
    let kinds = [TopologyKind::Ring, TopologyKind::Complete, TopologyKind::Grid2d, TopologyKind::StarRegularized];
    let problem_kinds = [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::NonconvexToy];
    let dim = rng.random_range(1..=32);
    let problem = ProblemSpec {
        kind: problem_kinds[rng.random_range(0..3)],
        dim,
        heterogeneity: rng.random_range(0.0..=1.0),
        sigma: rng.random_range(0.0..0.5),
        noise: if rng.random::<bool>() { NoiseKind::Gaussian } else { NoiseKind::StudentT },
        clip_g: rng.random::<bool>().then(|| rng.random_range(0.5..5.0)),
        batch: 1,
        mu: 0.01,
        samples_per_worker: 16,
        data_seed: None,
    };
    let compressor = match rng.random_range(0..4) {
        0 => CompressorSpec::IDENTITY,
        1 => CompressorSpec::SCALED_SIGN,
        2 => CompressorSpec { kind: CompressorKind::TopK, k: Some(rng.random_range(1..=dim)) },
        _ => CompressorSpec { kind: CompressorKind::RandomK, k: Some(rng.random_range(1..=dim)) },
    };
    let mut cfg = RunConfig::new(algorithm, problem);
    cfg.seed = rng.random();
    cfg.period = [1, 2, 4][rng.random_range(0..3)];
    cfg.topology = TopologySpec {
        kind: kinds[rng.random_range(0..4)],
        workers: rng.random_range(1..=8),
        weight_rule: if rng.random::<bool>() { WeightRule::UniformNeighbor } else { WeightRule::Metropolis },
    };
    cfg.adam = AdamHyper {
        eta: rng.random_range(1e-3..5e-2),
        beta1: rng.random_range(0.0..0.95),
        beta2: 0.999,
        tau: rng.random_range(0.01..0.5),
    };
    cfg.momentum_numerator = rng.random::<bool>();
    if algorithm == Algorithm::CdAdam {
        cfg.compressor = Some(compressor);
        cfg.gamma =
            if rng.random::<bool>() { GammaSetting::Fixed(rng.random_range(0.05..=1.0)) } else { GammaSetting::Auto };
    }
    cfg
}
