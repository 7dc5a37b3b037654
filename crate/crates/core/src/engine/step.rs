use std::collections::BTreeMap;

use super::{Algorithm, EngineError};
use crate::compression::{compress_into, residual_ratio, CompressorSpec};
use crate::optimizer::{adam_local_step_in_place, AdamHyper, MomentState, Numerator};
use crate::problems::Problem;
use crate::rng::Stream;
use crate::topology::Topology;

/// Everything one worker holds between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub x: Vec<f64>,
    pub moments: MomentState,
    /// Own hat-variable (compressed exchange only).
    pub x_hat_self: Option<Vec<f64>>,
    /// Local replicas of the neighbors' hat-variables, keyed by neighbor id.
    pub x_hat_neighbors: BTreeMap<usize, Vec<f64>>,
}

impl WorkerState {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            x: x0.to_vec(),
            moments: MomentState::zeros(x0.len()),
            x_hat_self: None,
            x_hat_neighbors: BTreeMap::new(),
        }
    }

    /// Worker state with hat-variables initialized to `x0`, for itself and
    /// for every neighbor. `x0` is shared, so no communication is needed.
    pub fn with_hat(x0: &[f64], neighbors: &[usize]) -> Self {
        let mut w = Self::new(x0);
        w.x_hat_self = Some(x0.to_vec());
        w.x_hat_neighbors = neighbors.iter().map(|&j| (j, x0.to_vec())).collect();
        w
    }

    /// All workers in their initial state for `algorithm`.
    pub fn initial(algorithm: Algorithm, topology: &Topology, x0: &[f64]) -> Vec<Self> {
        (0..topology.num_workers())
            .map(|k| match algorithm {
                Algorithm::CdAdam => Self::with_hat(x0, topology.neighbors(k)),
                _ => Self::new(x0),
            })
            .collect()
    }
}

/// Per-worker random streams.
#[derive(Debug, Clone)]
pub struct Streams {
    pub gradient: Vec<Stream>,
    pub compression: Vec<Stream>,
}

impl Streams {
    pub fn new(seed: u64, workers: usize) -> Self {
        use crate::rng::{worker_streams, Purpose};
        Self {
            gradient: worker_streams(seed, Purpose::Gradient, workers),
            compression: worker_streams(seed, Purpose::Compression, workers),
        }
    }
}

/// Read-only inputs to one iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub algorithm: Algorithm,
    pub hyper: AdamHyper,
    pub numerator: Numerator,
    pub period: usize,
    /// Consensus step size (compressed exchange only).
    pub gamma: f64,
    pub compressor: Option<CompressorSpec>,
    pub topology: &'a Topology,
    pub problem: &'a Problem,
}

/// What happened during one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Stochastic gradient drawn by each worker.
    pub gradients: Vec<Vec<f64>>,
    /// Per-worker update direction: `u / (sqrt(v) + tau)` for the adaptive
    /// algorithms, the raw gradient for SGD. `x_{t+1/2} = x_t - eta * direction`.
    pub directions: Vec<Vec<f64>>,
    pub communicated: bool,
    /// Bits put on the wire during this iteration, summed over workers.
    pub bits: u64,
    /// Smallest `1 - ||x - Q(x)||^2 / ||x||^2` over this round's nonzero
    /// compressor inputs.
    pub min_delta: Option<f64>,
}

/// Iteration `t` ends with a communication round iff `(t + 1) mod p = 0`.
#[inline]
pub fn is_comm_round(t: usize, period: usize) -> bool {
    (t + 1) % period == 0
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Local computation: every worker samples its gradient at its own iterate
/// and moves to `x_{t+1/2}`.
pub fn local_phase(
    workers: &mut [WorkerState],
    t: usize,
    ctx: &StepContext<'_>,
    streams: &mut Streams,
) -> Result<StepOutcome, EngineError> {
    let d = ctx.problem.dim();
    let mut out = StepOutcome {
        gradients: Vec::with_capacity(workers.len()),
        directions: Vec::with_capacity(workers.len()),
        ..Default::default()
    };
    for (k, w) in workers.iter_mut().enumerate() {
        let mut g = vec![0.0; d];
        ctx.problem.stochastic_gradient_into(k, &w.x, &mut streams.gradient[k], &mut g);
        if !all_finite(&g) {
            return Err(EngineError::NonFinite { iteration: t, worker: k });
        }
        let dir = if ctx.algorithm.is_adaptive() {
            let mut dir = vec![0.0; d];
            adam_local_step_in_place(&mut w.x, &mut w.moments, &g, &ctx.hyper, ctx.numerator, &mut dir);
            dir
        } else {
            for (x, gj) in w.x.iter_mut().zip(&g) {
                *x -= ctx.hyper.eta * gj;
            }
            g.clone()
        };
        if !all_finite(&w.x) {
            return Err(EngineError::NonFinite { iteration: t, worker: k });
        }
        out.gradients.push(g);
        out.directions.push(dir);
    }
    Ok(out)
}

/// `x_k <- sum_{j in N_k + {k}} w_kj x_j`, summed in ascending `j`. Returns the
/// bits sent: every worker ships its full-precision iterate to each neighbor.
pub fn gossip_round(workers: &mut [WorkerState], topology: &Topology) -> u64 {
    let d = workers[0].x.len();
    let half: Vec<Vec<f64>> = workers.iter().map(|w| w.x.clone()).collect();
    let mut bits = 0;
    for (k, w) in workers.iter_mut().enumerate() {
        let nbrs = topology.neighbors(k);
        let mut acc = vec![0.0; d];
        let mut add = |j: usize| {
            let wkj = topology.weight(k, j);
            for (a, x) in acc.iter_mut().zip(&half[j]) {
                *a += wkj * x;
            }
        };
        let split = nbrs.partition_point(|&j| j < k);
        nbrs[..split].iter().for_each(|&j| add(j));
        add(k);
        nbrs[split..].iter().for_each(|&j| add(j));
        w.x = acc;
        bits += nbrs.len() as u64 * 32 * d as u64;
    }
    bits
}

/// Compressed communication round.
///
/// 1. `x_k += gamma * sum_{j in N_k} w_kj (xhat_j - xhat_k)` from local replicas.
/// 2. `q_k = Q(x_k - xhat_k)` is sent to every neighbor.
/// 3. Every copy of `xhat_k` (own and replicas) becomes `xhat_k + q_k`.
///
/// Returns the bits sent and the smallest contraction observed this round.
pub fn compressed_round(
    workers: &mut [WorkerState],
    ctx: &StepContext<'_>,
    compression: &mut [Stream],
) -> Result<(u64, Option<f64>), EngineError> {
    let d = workers[0].x.len();
    let spec = ctx.compressor.expect("compressed round without a compressor");
    let topology = ctx.topology;
    for (k, w) in workers.iter_mut().enumerate() {
        let own = w.x_hat_self.as_ref().expect("hat-variable not initialized");
        let mut acc = vec![0.0; d];
        for &j in topology.neighbors(k) {
            let wkj = topology.weight(k, j);
            let replica = &w.x_hat_neighbors[&j];
            for ((a, r), s) in acc.iter_mut().zip(replica).zip(own) {
                *a += wkj * (r - s);
            }
        }
        for (x, a) in w.x.iter_mut().zip(&acc) {
            *x += ctx.gamma * a;
        }
    }
    let mut bits = 0;
    let mut min_delta = None;
    let mut diff = vec![0.0; d];
    let mut qs = Vec::with_capacity(workers.len());
    for (k, w) in workers.iter().enumerate() {
        let own = w.x_hat_self.as_ref().expect("hat-variable not initialized");
        for ((o, x), h) in diff.iter_mut().zip(&w.x).zip(own) {
            *o = x - h;
        }
        let mut q = vec![0.0; d];
        let payload = compress_into(&spec, &diff, &mut q, &mut compression[k])?;
        bits += payload * topology.degree(k) as u64;
        if diff.iter().any(|&v| v != 0.0) {
            let delta = 1.0 - residual_ratio(&diff, &q);
            min_delta = Some(min_delta.map_or(delta, |m: f64| m.min(delta)));
        }
        qs.push(q);
    }
    for (k, q) in qs.iter().enumerate() {
        add_assign(workers[k].x_hat_self.as_mut().unwrap(), q);
        for &j in topology.neighbors(k) {
            let replica = workers[j].x_hat_neighbors.get_mut(&k).expect("missing replica for neighbor");
            add_assign(replica, q);
        }
    }
    Ok((bits, min_delta))
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Every replica of `xhat_j` held by a neighbor must equal `xhat_j` bit-for-bit.
pub fn check_replica_coherence(
    workers: &[WorkerState],
    topology: &Topology,
    iteration: usize,
) -> Result<(), EngineError> {
    for (k, w) in workers.iter().enumerate() {
        for &j in topology.neighbors(k) {
            let theirs = workers[j].x_hat_self.as_deref();
            let mine = w.x_hat_neighbors.get(&j).map(Vec::as_slice);
            let same = match (mine, theirs) {
                (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                _ => false,
            };
            if !same {
                return Err(EngineError::ReplicaIncoherent { iteration, worker: k, neighbor: j });
            }
        }
    }
    Ok(())
}

/// One D-Adam iteration: local adaptive step, then gossip on communication rounds.
pub fn step_d_adam(
    workers: &mut [WorkerState],
    t: usize,
    ctx: &StepContext<'_>,
    streams: &mut Streams,
) -> Result<StepOutcome, EngineError> {
    let mut out = local_phase(workers, t, ctx, streams)?;
    if is_comm_round(t, ctx.period) {
        out.bits = gossip_round(workers, ctx.topology);
        out.communicated = true;
    }
    Ok(out)
}

/// One D-PSGD iteration. Identical schedule to D-Adam with a plain SGD step.
pub fn step_d_psgd(
    workers: &mut [WorkerState],
    t: usize,
    ctx: &StepContext<'_>,
    streams: &mut Streams,
) -> Result<StepOutcome, EngineError> {
    step_d_adam(workers, t, ctx, streams)
}

/// One CD-Adam iteration. Off communication rounds `x` and every hat-variable
/// carry over unchanged.
pub fn step_cd_adam(
    workers: &mut [WorkerState],
    t: usize,
    ctx: &StepContext<'_>,
    streams: &mut Streams,
) -> Result<StepOutcome, EngineError> {
    let mut out = local_phase(workers, t, ctx, streams)?;
    if is_comm_round(t, ctx.period) {
        (out.bits, out.min_delta) = compressed_round(workers, ctx, &mut streams.compression)?;
        out.communicated = true;
        check_replica_coherence(workers, ctx.topology, t)?;
    }
    Ok(out)
}

/// Dispatch on `ctx.algorithm`.
pub fn step(
    workers: &mut [WorkerState],
    t: usize,
    ctx: &StepContext<'_>,
    streams: &mut Streams,
) -> Result<StepOutcome, EngineError> {
    match ctx.algorithm {
        Algorithm::DAdam | Algorithm::DAdamVanilla => step_d_adam(workers, t, ctx, streams),
        Algorithm::DPsgd => step_d_psgd(workers, t, ctx, streams),
        Algorithm::CdAdam => step_cd_adam(workers, t, ctx, streams),
    }
}
