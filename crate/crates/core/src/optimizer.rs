//! Per-worker adaptive local step.
//!
//! One step of the recursion
//!
//! ```text
//! m' = b1 m + (1 - b1) g
//! v' = b2 v + (1 - b2) g*g
//! x' = x - eta * u / (sqrt(v') + tau)      u = m' or g
//! ```
//!
//! with no bias correction and zero-initialized moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { eta: 1e-3, beta1: 0.9, beta2: 0.999, tau: 0.01 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HyperError {
    #[error("eta must be positive and finite, got {0}")]
    Eta(f64),
    #[error("beta1 must lie in [0, 1], got {0}")]
    Beta1(f64),
    #[error("beta2 must lie in [0, 1], got {0}")]
    Beta2(f64),
    #[error("tau must lie in (0, 1), got {0}")]
    Tau(f64),
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), HyperError> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(HyperError::Eta(self.eta));
        }
        if !(0.0..=1.0).contains(&self.beta1) {
            return Err(HyperError::Beta1(self.beta1));
        }
        if !(0.0..=1.0).contains(&self.beta2) {
            return Err(HyperError::Beta2(self.beta2));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(HyperError::Tau(self.tau));
        }
        Ok(())
    }
}

/// Which quantity sits in the numerator of the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Numerator {
    /// First moment `m'`.
    Momentum,
    /// Raw stochastic gradient `g`.
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl MomentState {
    pub fn zeros(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim] }
    }
}

/// In-place local step. `x` becomes `x_{t+1/2}`, `state` is advanced, and the
/// normalized direction `u / (sqrt(v') + tau)` is written to `direction`.
pub fn adam_local_step_in_place(
    x: &mut [f64],
    state: &mut MomentState,
    g: &[f64],
    h: &AdamHyper,
    numerator: Numerator,
    direction: &mut [f64],
) {
    let n = x.len();
    debug_assert!(g.len() == n && state.m.len() == n && state.v.len() == n && direction.len() == n);
    for j in 0..n {
        let gj = g[j];
        let m = h.beta1 * state.m[j] + (1.0 - h.beta1) * gj;
        let v = h.beta2 * state.v[j] + (1.0 - h.beta2) * gj * gj;
        state.m[j] = m;
        state.v[j] = v;
        let u = match numerator {
            Numerator::Momentum => m,
            Numerator::Gradient => gj,
        };
        let dir = u / (v.sqrt() + h.tau);
        direction[j] = dir;
        x[j] -= h.eta * dir;
    }
}

/// Value-passing form of [`adam_local_step_in_place`].
pub fn adam_local_step(
    x: &[f64],
    state: &MomentState,
    g: &[f64],
    h: &AdamHyper,
    numerator: Numerator,
) -> (Vec<f64>, MomentState) {
    let mut x_half = x.to_vec();
    let mut next = state.clone();
    let mut dir = vec![0.0; x.len()];
    adam_local_step_in_place(&mut x_half, &mut next, g, h, numerator, &mut dir);
    (x_half, next)
}
