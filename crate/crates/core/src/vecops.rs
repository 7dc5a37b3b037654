//! Small dense-vector helpers.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Column mean of a set of equal-length vectors.
///
/// Computed as `x_0 + mean(x_k - x_0)`, which returns `x_0` bit-exactly when
/// every vector is equal.
pub fn shifted_mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let base = &vs[0];
    let k = vs.len() as f64;
    let mut acc = vec![0.0; base.len()];
    for v in &vs[1..] {
        for ((a, x), b) in acc.iter_mut().zip(v).zip(base) {
            *a += x - b;
        }
    }
    acc.iter().zip(base).map(|(a, b)| b + a / k).collect()
}

/// `sum_k ||x_k - mean||^2`.
pub fn consensus_error(vs: &[Vec<f64>], mean: &[f64]) -> f64 {
    vs.iter().map(|v| dist_sq(v, mean)).sum()
}
