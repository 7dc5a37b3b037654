use nalgebra::{DMatrix, SymmetricEigen};

use crate::vecops::{dot, norm_sq};

/// Ridge-regularized logistic loss over a local sample set,
/// `(1/n) sum_i log(1 + exp(-y_i a_i^T x)) + mu ||x||^2`, labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    mu: f64,
    smoothness: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, mu: f64) -> Self {
        assert_eq!(features.len(), labels.len());
        assert!(!features.is_empty(), "logistic loss needs samples");
        let n = features.len();
        let d = features[0].len();
        let flat: Vec<f64> = features.iter().flatten().copied().collect();
        let a = DMatrix::from_row_slice(n, d, &flat);
        let lambda_max = SymmetricEigen::new(a.transpose() * &a).eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
        Self { features, labels, mu, smoothness: lambda_max / (4.0 * n as f64) + 2.0 * mu }
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.features.len() as f64;
        let loss: f64 = self.features.iter().zip(&self.labels).map(|(a, y)| softplus(-y * dot(a, x))).sum();
        loss / n + self.mu * norm_sq(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.features.len() as f64;
        out.fill(0.0);
        for (a, y) in self.features.iter().zip(&self.labels) {
            let c = -y * sigmoid(-y * dot(a, x)) / n;
            for (o, ai) in out.iter_mut().zip(a) {
                *o += c * ai;
            }
        }
        for (o, xi) in out.iter_mut().zip(x) {
            *o += 2.0 * self.mu * xi;
        }
    }

    /// `lambda_max(A^T A) / (4n) + 2 mu`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }
}
