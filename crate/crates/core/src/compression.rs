//! Contractive compression operators.
//!
//! Every operator `Q` here satisfies `||x - Q(x)||^2 <= (1 - delta) ||x||^2`
//! for a known `delta in (0, 1]`, deterministically except for `random_k`,
//! where the bound holds in expectation over the index draw.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::vecops::norm_sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorKind {
    Identity,
    /// `(||x||_1 / d) * sign(x)`, with `sign(0) = +1`.
    ScaledSign,
    /// Keep the `k` largest-magnitude coordinates.
    TopK,
    /// Keep `k` coordinates drawn uniformly without replacement, unscaled.
    RandomK,
}

#[derive(Debug, Error, PartialEq)]
pub enum CompressionError {
    #[error("cannot compress a zero-length vector")]
    EmptyVector,
    #[error("{kind:?} needs k in [1, {dim}], got {k:?}")]
    KOutOfRange { kind: CompressorKind, k: Option<usize>, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl CompressorSpec {
    pub const IDENTITY: Self = Self { kind: CompressorKind::Identity, k: None };
    pub const SCALED_SIGN: Self = Self { kind: CompressorKind::ScaledSign, k: None };

    pub fn top_k(k: usize) -> Self {
        Self { kind: CompressorKind::TopK, k: Some(k) }
    }

    pub fn random_k(k: usize) -> Self {
        Self { kind: CompressorKind::RandomK, k: Some(k) }
    }

    /// Check that this compressor is usable on `dim`-vectors.
    pub fn validate(&self, dim: usize) -> Result<(), CompressionError> {
        if dim == 0 {
            return Err(CompressionError::EmptyVector);
        }
        match self.kind {
            CompressorKind::TopK | CompressorKind::RandomK => match self.k {
                Some(k) if (1..=dim).contains(&k) => Ok(()),
                k => Err(CompressionError::KOutOfRange { kind: self.kind, k, dim }),
            },
            _ => Ok(()),
        }
    }

    /// Worst-case (or, for `random_k`, expected) contraction coefficient on
    /// `dim`-vectors.
    pub fn guaranteed_delta(&self, dim: usize) -> f64 {
        match self.kind {
            CompressorKind::Identity => 1.0,
            CompressorKind::ScaledSign => 1.0 / dim as f64,
            CompressorKind::TopK | CompressorKind::RandomK => self.k.unwrap_or(dim) as f64 / dim as f64,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind != CompressorKind::RandomK
    }

    /// Wire size in bits of one compressed `dim`-vector.
    pub fn payload_bits(&self, dim: usize) -> u64 {
        let d = dim as u64;
        let k = self.k.unwrap_or(dim) as u64;
        match self.kind {
            CompressorKind::Identity => 32 * d,
            CompressorKind::ScaledSign => d + 32,
            CompressorKind::TopK => k * (32 + ceil_log2(d)),
            // indices travel implicitly through a shared per-round seed
            CompressorKind::RandomK => 32 * k + 32,
        }
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - u64::from((n - 1).leading_zeros())
    }
}

/// Per-vector contraction coefficient of the scaled sign operator,
/// `||x||_1^2 / (d ||x||_2^2)`.
pub fn sign_delta(x: &[f64]) -> f64 {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let l2 = norm_sq(x);
    if l2 == 0.0 {
        1.0
    } else {
        l1 * l1 / (x.len() as f64 * l2)
    }
}

/// Compress `x` into `out`; returns the payload size in bits.
///
/// `rng` is consumed only by `random_k`.
pub fn compress_into(
    spec: &CompressorSpec,
    x: &[f64],
    out: &mut [f64],
    rng: &mut Stream,
) -> Result<u64, CompressionError> {
    let d = x.len();
    spec.validate(d)?;
    debug_assert_eq!(out.len(), d);
    match spec.kind {
        CompressorKind::Identity => out.copy_from_slice(x),
        CompressorKind::ScaledSign => {
            let scale = x.iter().map(|v| v.abs()).sum::<f64>() / d as f64;
            for (o, &v) in out.iter_mut().zip(x) {
                *o = if v >= 0.0 { scale } else { -scale };
            }
        }
        CompressorKind::TopK => {
            let k = spec.k.unwrap_or(d);
            let mut order: Vec<usize> = (0..d).collect();
            // stable: ties keep the lower index
            order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
            out.fill(0.0);
            for &i in &order[..k] {
                out[i] = x[i];
            }
        }
        CompressorKind::RandomK => {
            let k = spec.k.unwrap_or(d);
            out.fill(0.0);
            for i in rand::seq::index::sample(rng, d, k).iter() {
                out[i] = x[i];
            }
        }
    }
    Ok(spec.payload_bits(d))
}

/// Allocating wrapper around [`compress_into`].
pub fn compress(spec: &CompressorSpec, x: &[f64], rng: &mut Stream) -> Result<(Vec<f64>, u64), CompressionError> {
    let mut out = vec![0.0; x.len()];
    let bits = compress_into(spec, x, &mut out, rng)?;
    Ok((out, bits))
}

/// `||x - Q(x)||^2 / ||x||^2`, or 0 for the zero vector.
pub fn residual_ratio(x: &[f64], q: &[f64]) -> f64 {
    let nx = norm_sq(x);
    if nx == 0.0 {
        return 0.0;
    }
    let r: f64 = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    r / nx
}

/// Outcome of [`verify_contraction`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub kind: CompressorKind,
    pub k: Option<usize>,
    pub dim: usize,
    pub trials: usize,
    pub guaranteed_delta: f64,
    /// Largest single-draw residual ratio observed.
    pub max_ratio: f64,
    /// Grand mean of the residual ratio (over vectors and redraws).
    pub mean_ratio: f64,
    /// Standard error of `mean_ratio` across vectors.
    pub standard_error: f64,
    /// `1 - delta` plus the allowed slack.
    pub threshold: f64,
    pub violations: Vec<ContractionViolation>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionViolation {
    pub trial: usize,
    pub ratio: f64,
    pub vector: Vec<f64>,
}

/// Redraws per vector for stochastic compressors.
pub const RANDOM_REDRAWS: usize = 1000;

/// Sample a test vector from a heavy-tailed mixture: Gaussian, Student-t with
/// three degrees of freedom, or a few large spikes on a zero background.
pub fn sample_heavy_tailed(d: usize, rng: &mut Stream) -> Vec<f64> {
    match rng.random_range(0..3u8) {
        0 => (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        1 => {
            let t = StudentT::new(3.0).expect("valid degrees of freedom");
            (0..d).map(|_| t.sample(rng)).collect()
        }
        _ => {
            let mut x = vec![0.0; d];
            let spikes = rng.random_range(1..=d.min(3));
            for _ in 0..spikes {
                let i = rng.random_range(0..d);
                let mag = 10f64.powf(rng.random_range(-3.0..3.0));
                x[i] = if rng.random::<bool>() { mag } else { -mag };
            }
            x
        }
    }
}

/// Empirically certify the contraction inequality on `trials` random vectors.
///
/// Deterministic operators must satisfy `ratio <= 1 - delta + 1e-12` on every
/// sample. For `random_k` each vector is compressed [`RANDOM_REDRAWS`] times;
/// the grand mean ratio must stay below `1 - delta + 3 SE`.
pub fn verify_contraction(
    spec: &CompressorSpec,
    trials: usize,
    dim: usize,
    rng: &mut Stream,
) -> Result<ContractionReport, CompressionError> {
    spec.validate(dim)?;
    let delta = spec.guaranteed_delta(dim);
    let redraws = if spec.is_deterministic() { 1 } else { RANDOM_REDRAWS };
    let mut q = vec![0.0; dim];
    let mut max_ratio: f64 = 0.0;
    let mut per_vector = Vec::with_capacity(trials);
    let mut violations = Vec::new();
    for trial in 0..trials.max(1) {
        let x = sample_heavy_tailed(dim, rng);
        let mut sum = 0.0;
        for _ in 0..redraws {
            compress_into(spec, &x, &mut q, rng)?;
            let ratio = residual_ratio(&x, &q);
            max_ratio = max_ratio.max(ratio);
            sum += ratio;
            if spec.is_deterministic() && ratio > 1.0 - delta + 1e-12 {
                violations.push(ContractionViolation { trial, ratio, vector: x.clone() });
            }
        }
        per_vector.push(sum / redraws as f64);
    }
    let n = per_vector.len() as f64;
    let mean = per_vector.iter().sum::<f64>() / n;
    let var = if n > 1.0 { per_vector.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let se = (var / n).sqrt();
    let threshold = if spec.is_deterministic() { 1.0 - delta + 1e-12 } else { 1.0 - delta + 3.0 * se };
    let passed = if spec.is_deterministic() { violations.is_empty() } else { mean <= threshold };
    Ok(ContractionReport {
        kind: spec.kind,
        k: spec.k,
        dim,
        trials: per_vector.len(),
        guaranteed_delta: delta,
        max_ratio,
        mean_ratio: mean,
        standard_error: se,
        threshold,
        violations,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn rng() -> Stream {
        stream(11, Purpose::Verification, 0)
    }

    #[test]
    fn sign_of_equal_magnitudes_is_exact() {
        let (q, bits) = compress(&CompressorSpec::SCALED_SIGN, &[1.0; 4], &mut rng()).unwrap();
        assert_eq!(q, vec![1.0; 4]);
        assert_eq!(bits, 4 + 32);
    }

    #[test]
    fn sign_of_two_zero() {
        let x = [2.0, 0.0];
        let (q, _) = compress(&CompressorSpec::SCALED_SIGN, &x, &mut rng()).unwrap();
        assert_eq!(q, vec![1.0, 1.0]);
        // brute force on the definition
        let resid: f64 = x.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
        assert_eq!(resid, 2.0);
        assert_eq!(norm_sq(&x), 4.0);
        assert_abs_diff_eq!(residual_ratio(&x, &q), 0.5);
        assert_abs_diff_eq!(1.0 - sign_delta(&x), 0.5);
    }

    #[test]
    fn top_one_of_two() {
        let x = [3.0, 1.0];
        let (q, bits) = compress(&CompressorSpec::top_k(1), &x, &mut rng()).unwrap();
        assert_eq!(q, vec![3.0, 0.0]);
        assert_abs_diff_eq!(residual_ratio(&x, &q), 0.1);
        assert!(residual_ratio(&x, &q) <= 1.0 - 0.5);
        assert_eq!(bits, 32 + 1);
    }

    #[test]
    fn payload_accounting() {
        assert_eq!(CompressorSpec::IDENTITY.payload_bits(10), 320);
        assert_eq!(CompressorSpec::SCALED_SIGN.payload_bits(64), 96);
        assert_eq!(CompressorSpec::top_k(3).payload_bits(10), 3 * (32 + 4));
        assert_eq!(CompressorSpec::top_k(3).payload_bits(16), 3 * (32 + 4));
        assert_eq!(CompressorSpec::top_k(3).payload_bits(17), 3 * (32 + 5));
        assert_eq!(CompressorSpec::random_k(3).payload_bits(17), 3 * 32 + 32);
    }

    #[test]
    fn sign_payload_is_about_one_thirty_second() {
        for d in [64usize, 1_000, 1_000_000] {
            let ratio =
                CompressorSpec::SCALED_SIGN.payload_bits(d) as f64 / CompressorSpec::IDENTITY.payload_bits(d) as f64;
            assert!(ratio < 1.0 / 16.0);
            assert_abs_diff_eq!(ratio, (d as f64 + 32.0) / (32.0 * d as f64));
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let zero = [0.0; 5];
        for spec in [
            CompressorSpec::IDENTITY,
            CompressorSpec::SCALED_SIGN,
            CompressorSpec::top_k(2),
            CompressorSpec::random_k(2),
        ] {
            let (q, _) = compress(&spec, &zero, &mut rng()).unwrap();
            assert!(q.iter().all(|&v| v == 0.0), "{spec:?}");
        }
    }

    #[test]
    fn errors() {
        assert_eq!(compress(&CompressorSpec::IDENTITY, &[], &mut rng()).unwrap_err(), CompressionError::EmptyVector);
        assert!(matches!(
            compress(&CompressorSpec::top_k(0), &[1.0], &mut rng()),
            Err(CompressionError::KOutOfRange { .. })
        ));
        assert!(matches!(
            compress(&CompressorSpec::random_k(3), &[1.0, 2.0], &mut rng()),
            Err(CompressionError::KOutOfRange { .. })
        ));
        assert!(CompressorSpec { kind: CompressorKind::TopK, k: None }.validate(3).is_err());
    }

    #[test]
    fn identity_and_full_top_k_have_zero_residual() {
        let id = verify_contraction(&CompressorSpec::IDENTITY, 200, 7, &mut rng()).unwrap();
        assert_eq!(id.max_ratio, 0.0);
        let full = verify_contraction(&CompressorSpec::top_k(10), 200, 10, &mut rng()).unwrap();
        assert_eq!(full.max_ratio, 0.0);
        assert!(id.passed && full.passed);
    }

    #[test]
    fn random_k_mean_ratio() {
        let r = verify_contraction(&CompressorSpec::random_k(2), 500, 8, &mut rng()).unwrap();
        assert!(r.passed, "{r:?}");
        // the expectation is exactly 1 - k/d
        assert!((r.mean_ratio - 0.75).abs() < 4.0 * r.standard_error + 1e-3);
    }

    #[test]
    fn deterministic_given_stream() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = compress(&CompressorSpec::random_k(5), &x, &mut rng()).unwrap();
        let b = compress(&CompressorSpec::random_k(5), &x, &mut rng()).unwrap();
        assert_eq!(a, b);
    }
}
