//! Synthetic per-worker objectives with exact and stochastic gradient oracles.
//!
//! The global objective is `f(x) = (1/K) sum_k f_k(x)`. Each kind exposes an
//! analytic smoothness constant `L` so the bounded-variance and smoothness
//! assumptions can be checked literally.

mod logistic;
mod quadratic;
mod squashed;

pub use logistic::Logistic;
pub use quadratic::Quadratic;
pub use squashed::SquashedQuadratic;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    NonconvexToy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Student-t with three degrees of freedom, rescaled to variance `sigma^2`.
    StudentT,
}

/// Resolved problem section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(rename = "d")]
    pub dim: usize,
    pub heterogeneity: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    #[serde(rename = "clip_G", default, skip_serializing_if = "Option::is_none")]
    pub clip_g: Option<f64>,
    pub batch: usize,
    /// Ridge coefficient for the quadratic and logistic kinds.
    pub mu: f64,
    /// Sample count per worker for the logistic kind.
    pub samples_per_worker: usize,
    /// Seed for the problem data; the run seed is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            dim: 10,
            heterogeneity: 0.5,
            sigma: 0.1,
            noise: NoiseKind::Gaussian,
            clip_g: None,
            batch: 1,
            mu: 0.01,
            samples_per_worker: 32,
            data_seed: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("problem dimension must be positive")]
    ZeroDim,
    #[error("problem needs at least one worker")]
    NoWorkers,
    #[error("heterogeneity must lie in [0, 1], got {0}")]
    Heterogeneity(f64),
    #[error("noise scale must be finite and nonnegative, got {0}")]
    Sigma(f64),
    #[error("clip_G must be positive, got {0}")]
    Clip(f64),
    #[error("batch size must be positive")]
    Batch,
    #[error("mu must be finite and nonnegative, got {0}")]
    Mu(f64),
    #[error("logistic problems need at least one sample per worker")]
    Samples,
    #[error("local objectives disagree on dimension: {0} vs {1}")]
    DimMismatch(usize, usize),
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.dim == 0 {
            return Err(ProblemError::ZeroDim);
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(ProblemError::Heterogeneity(self.heterogeneity));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(ProblemError::Sigma(self.sigma));
        }
        if let Some(g) = self.clip_g {
            if !(g.is_finite() && g > 0.0) {
                return Err(ProblemError::Clip(g));
            }
        }
        if self.batch == 0 {
            return Err(ProblemError::Batch);
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(ProblemError::Mu(self.mu));
        }
        if self.kind == ProblemKind::Logistic && self.samples_per_worker == 0 {
            return Err(ProblemError::Samples);
        }
        Ok(())
    }
}

/// One worker's local objective.
#[derive(Debug, Clone)]
pub enum LocalObjective {
    Quadratic(Quadratic),
    Logistic(Logistic),
    Squashed(SquashedQuadratic),
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(q) => q.dim(),
            Self::Logistic(l) => l.dim(),
            Self::Squashed(s) => s.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Quadratic(q) => q.value(x),
            Self::Logistic(l) => l.value(x),
            Self::Squashed(s) => s.value(x),
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Quadratic(q) => q.gradient_into(x, out),
            Self::Logistic(l) => l.gradient_into(x, out),
            Self::Squashed(s) => s.gradient_into(x, out),
        }
    }

    pub fn smoothness(&self) -> f64 {
        match self {
            Self::Quadratic(q) => q.smoothness(),
            Self::Logistic(l) => l.smoothness(),
            Self::Squashed(s) => s.smoothness(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    kind: Option<ProblemKind>,
    dim: usize,
    locals: Vec<LocalObjective>,
    smoothness: f64,
    noise_sigma: Vec<f64>,
    noise: NoiseKind,
    clip_g: Option<f64>,
    f_star: Option<f64>,
    minimizer: Option<Vec<f64>>,
}

impl Problem {
    /// Assemble a problem from explicit local objectives.
    ///
    /// `sigma` is the per-call noise scale before batching; the oracle uses
    /// `sigma / sqrt(batch)`. When every local objective is quadratic the
    /// global minimizer and `f_*` are solved in closed form.
    pub fn from_locals(
        locals: Vec<LocalObjective>,
        sigma: Vec<f64>,
        noise: NoiseKind,
        clip_g: Option<f64>,
        batch: usize,
    ) -> Result<Self, ProblemError> {
        let first = locals.first().ok_or(ProblemError::NoWorkers)?;
        let dim = first.dim();
        if dim == 0 {
            return Err(ProblemError::ZeroDim);
        }
        if let Some(bad) = locals.iter().find(|l| l.dim() != dim) {
            return Err(ProblemError::DimMismatch(dim, bad.dim()));
        }
        if sigma.len() != dim {
            return Err(ProblemError::DimMismatch(dim, sigma.len()));
        }
        if let Some(&s) = sigma.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(ProblemError::Sigma(s));
        }
        if batch == 0 {
            return Err(ProblemError::Batch);
        }
        let smoothness = locals.iter().map(LocalObjective::smoothness).fold(0.0, f64::max);
        let scale = 1.0 / (batch as f64).sqrt();
        let mut p = Problem {
            kind: None,
            dim,
            locals,
            smoothness,
            noise_sigma: sigma.iter().map(|s| s * scale).collect(),
            noise,
            clip_g,
            f_star: None,
            minimizer: None,
        };
        if let Some(x) = p.quadratic_minimizer() {
            p.f_star = Some(p.value(&x));
            p.minimizer = Some(x);
        }
        Ok(p)
    }

    fn quadratic_minimizer(&self) -> Option<Vec<f64>> {
        let d = self.dim;
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut c = DVector::<f64>::zeros(d);
        for l in &self.locals {
            let LocalObjective::Quadratic(q) = l else { return None };
            h += q.hessian();
            c += q.linear_term();
        }
        let x = h.lu().solve(&c)?;
        Some(x.iter().copied().collect())
    }

    pub fn kind(&self) -> Option<ProblemKind> {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_workers(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, k: usize) -> &LocalObjective {
        &self.locals[k]
    }

    /// Smoothness constant valid for every local objective.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Effective per-coordinate noise scale (after batching).
    pub fn noise_sigma(&self) -> &[f64] {
        &self.noise_sigma
    }

    pub fn clip_g(&self) -> Option<f64> {
        self.clip_g
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    pub fn local_value(&self, k: usize, x: &[f64]) -> f64 {
        self.locals[k].value(x)
    }

    /// `f(x) = (1/K) sum_k f_k(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.locals.iter().map(|l| l.value(x)).sum::<f64>() / self.locals.len() as f64
    }

    pub fn full_gradient_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        self.locals[k].gradient_into(x, out);
    }

    /// Exact gradient of worker `k`'s objective.
    pub fn full_gradient(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.full_gradient_into(k, x, &mut g);
        g
    }

    /// Gradient of the global objective.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for l in &self.locals {
            l.gradient_into(x, &mut g);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        let k = self.locals.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }

    /// Exact gradient plus independent per-coordinate noise, clipped to
    /// `[-G, G]` when a clip bound is set.
    pub fn stochastic_gradient_into(&self, k: usize, x: &[f64], rng: &mut Stream, out: &mut [f64]) {
        self.full_gradient_into(k, x, out);
        match self.noise {
            NoiseKind::Gaussian => {
                for (o, &s) in out.iter_mut().zip(&self.noise_sigma) {
                    if s > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        *o += s * z;
                    }
                }
            }
            NoiseKind::StudentT => {
                let t = StudentT::new(3.0).expect("valid degrees of freedom");
                let norm = 1.0 / 3f64.sqrt();
                for (o, &s) in out.iter_mut().zip(&self.noise_sigma) {
                    if s > 0.0 {
                        *o += s * norm * t.sample(rng);
                    }
                }
            }
        }
        if let Some(g) = self.clip_g {
            out.iter_mut().for_each(|o| *o = o.clamp(-g, g));
        }
    }

    pub fn stochastic_gradient(&self, k: usize, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.stochastic_gradient_into(k, x, rng, &mut g);
        g
    }
}

fn gaussian_vec(rng: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn lerp(a: &[f64], b: &[f64], h: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - h) * x + h * y).collect()
}

/// Random, well-conditioned square design `I + 0.5 G / sqrt(d)`.
fn random_design(rng: &mut Stream, d: usize) -> DMatrix<f64> {
    let g = gaussian_vec(rng, d * d, 0.5 / (d as f64).sqrt());
    DMatrix::from_row_slice(d, d, &g) + DMatrix::identity(d, d)
}

/// Instantiate a problem family with `workers` heterogeneous local objectives.
///
/// Heterogeneity interpolates each worker's data between a shared base
/// (`0`: identical objectives) and an independent worker-specific draw (`1`).
/// For logistic regression, `1` means every worker only sees samples of a
/// single label. Base data is drawn from stream `(data_seed, 0)` and worker
/// `k`'s private data from stream `(data_seed, k + 1)`, so a worker's data
/// does not depend on the total worker count.
pub fn make_heterogeneous(spec: &ProblemSpec, workers: usize, data_seed: u64) -> Result<Problem, ProblemError> {
    spec.validate()?;
    if workers == 0 {
        return Err(ProblemError::NoWorkers);
    }
    let d = spec.dim;
    let h = spec.heterogeneity;
    let mut base = stream(data_seed, Purpose::ProblemData, 0);
    let private = |k: usize| stream(data_seed, Purpose::ProblemData, k as u64 + 1);
    let locals: Vec<LocalObjective> = match spec.kind {
        ProblemKind::Quadratic => {
            let a0 = random_design(&mut base, d);
            let b0 = gaussian_vec(&mut base, d, 1.0);
            (0..workers)
                .map(|k| {
                    let mut rng = private(k);
                    let ak = random_design(&mut rng, d);
                    let bk = gaussian_vec(&mut rng, d, 2.0);
                    let a = &a0 * (1.0 - h) + ak * h;
                    LocalObjective::Quadratic(Quadratic::new(a, lerp(&b0, &bk, h), spec.mu))
                })
                .collect()
        }
        ProblemKind::Logistic => {
            let n = spec.samples_per_worker;
            let dir = unit_direction(&mut base, d);
            let pool: Vec<(Vec<f64>, f64)> = (0..n)
                .map(|i| {
                    let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                    (cluster_sample(&mut base, &dir, y), y)
                })
                .collect();
            let shared = ((1.0 - h) * n as f64).round() as usize;
            (0..workers)
                .map(|k| {
                    let mut rng = private(k);
                    let label = if k % 2 == 0 { 1.0 } else { -1.0 };
                    let mut feats = Vec::with_capacity(n);
                    let mut labels = Vec::with_capacity(n);
                    for (a, y) in &pool[..shared] {
                        feats.push(a.clone());
                        labels.push(*y);
                    }
                    for _ in shared..n {
                        feats.push(cluster_sample(&mut rng, &dir, label));
                        labels.push(label);
                    }
                    LocalObjective::Logistic(Logistic::new(feats, labels, spec.mu))
                })
                .collect()
        }
        ProblemKind::NonconvexToy => {
            let c0 = gaussian_vec(&mut base, d, 1.0);
            let scales: Vec<f64> = (0..d).map(|_| 0.5 + base.random::<f64>()).collect();
            (0..workers)
                .map(|k| {
                    let ck = gaussian_vec(&mut private(k), d, 2.0);
                    LocalObjective::Squashed(SquashedQuadratic::new(lerp(&c0, &ck, h), scales.clone()))
                })
                .collect()
        }
    };
    let mut p = Problem::from_locals(locals, vec![spec.sigma; d], spec.noise, spec.clip_g, spec.batch)?;
    p.kind = Some(spec.kind);
    if spec.kind == ProblemKind::NonconvexToy && h == 0.0 {
        if let LocalObjective::Squashed(s) = &p.locals[0] {
            p.minimizer = Some(s.centers().to_vec());
            p.f_star = Some(0.0);
        }
    }
    Ok(p)
}

fn unit_direction(rng: &mut Stream, d: usize) -> Vec<f64> {
    let mut u = gaussian_vec(rng, d, 1.0);
    let n = crate::vecops::norm_sq(&u).sqrt();
    if n == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= n);
    }
    u
}

/// Feature vector for a sample of label `y`: `y * dir + N(0, 0.5^2 I)`.
fn cluster_sample(rng: &mut Stream, dir: &[f64], y: f64) -> Vec<f64> {
    dir.iter().map(|u| y * u + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect()
}
