use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::vecops::norm_sq;

/// `f(x) = 1/2 ||A x - b||^2 + mu ||x||^2`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: Vec<f64>,
    mu: f64,
    // row-major A^T A + 2 mu I
    hessian: Vec<f64>,
    atb: Vec<f64>,
    smoothness: f64,
}

impl Quadratic {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, mu: f64) -> Self {
        assert_eq!(a.nrows(), b.len(), "A and b disagree on row count");
        let d = a.ncols();
        let ata = a.transpose() * &a;
        let lambda_max = SymmetricEigen::new(ata.clone()).eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
        let h = ata + DMatrix::identity(d, d) * (2.0 * mu);
        let hessian = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| h[(i, j)]).collect();
        let atb = (a.transpose() * DVector::from_column_slice(&b)).iter().copied().collect();
        Self { a, b, mu, hessian, atb, smoothness: lambda_max + 2.0 * mu }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut r = 0.0;
        for (i, bi) in self.b.iter().enumerate() {
            let ax: f64 = self.a.row(i).iter().zip(x).map(|(a, x)| a * x).sum();
            r += (ax - bi) * (ax - bi);
        }
        0.5 * r + self.mu * norm_sq(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.hessian[i * d..(i + 1) * d];
            *o = row.iter().zip(x).map(|(h, x)| h * x).sum::<f64>() - self.atb[i];
        }
    }

    /// `lambda_max(A^T A) + 2 mu`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.hessian)
    }

    /// `A^T b`.
    pub fn linear_term(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.atb)
    }
}
