//! Gossip topologies and their mixing matrices.
//!
//! A [`Topology`] pairs a connected worker graph with a symmetric, doubly
//! stochastic mixing matrix `W` and caches its spectrum. The spectral gap
//! `rho = 1 - |lambda_2|` controls how fast repeated gossip drives workers to
//! consensus: for any `d x K` matrix `X` with column mean `Xbar`,
//! `||XW - Xbar||_F <= (1 - rho) ||X - Xbar||_F`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on row/column sums for matrices we construct ourselves.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance on symmetry and stochasticity for caller-supplied matrices.
pub const VALIDATION_TOL: f64 = 1e-10;
/// Below this the graph is treated as disconnected.
pub const ZERO_GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Grid2d,
    StarRegularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `1/(deg+1)` on self and every neighbor. Only valid on regular graphs.
    #[default]
    UniformNeighbor,
    /// `1/(1+max(deg_i, deg_j))` off the diagonal, residual on the diagonal.
    Metropolis,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology needs at least one worker")]
    NoWorkers,
    #[error("mixing matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("mixing matrix is not symmetric at ({row}, {col}): {a} vs {b}")]
    NotSymmetric { row: usize, col: usize, a: f64, b: f64 },
    #[error("row {row} of the mixing matrix sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("column {col} of the mixing matrix sums to {sum}, expected 1")]
    ColumnSum { col: usize, sum: f64 },
    #[error("mixing matrix has entry {value} at ({row}, {col}) outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("zero spectral gap (rho = {rho:e}): the worker graph is disconnected")]
    ZeroSpectralGap { rho: f64 },
    #[error("uniform neighbor weights need a regular graph; node {node} has degree {degree}, node 0 has {expected}")]
    NotRegular { node: usize, degree: usize, expected: usize },
}

/// Spectral data of a mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// All eigenvalues, sorted in decreasing order of value.
    pub eigenvalues: Vec<f64>,
    /// `|lambda_2|`: the second-largest eigenvalue modulus.
    pub second_eig_mod: f64,
    /// `1 - |lambda_2|`.
    pub spectral_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Topology {
    kind: Option<TopologyKind>,
    weight_rule: Option<WeightRule>,
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    spectrum: Spectrum,
}

/// JSON view printed by `topology inspect` and embedded in trace headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub kind: Option<TopologyKind>,
    pub weight_rule: Option<WeightRule>,
    pub workers: usize,
    pub second_eig_mod: f64,
    pub spectral_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    #[serde(flatten)]
    pub summary: TopologySummary,
    pub weights: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    pub averaging_deviation: f64,
}

/// Build one of the standard topologies.
///
/// `star_regularized` always uses Metropolis weights: uniform weights on a
/// star are not doubly stochastic.
pub fn build_topology(kind: TopologyKind, workers: usize, weight_rule: WeightRule) -> Result<Topology, TopologyError> {
    if workers == 0 {
        return Err(TopologyError::NoWorkers);
    }
    let neighbors = match kind {
        TopologyKind::Ring => ring_neighbors(workers),
        TopologyKind::Complete => (0..workers).map(|i| (0..workers).filter(|&j| j != i).collect()).collect(),
        TopologyKind::Grid2d => {
            let (rows, cols) = grid_shape(workers);
            torus_neighbors(rows, cols)
        }
        TopologyKind::StarRegularized => {
            (0..workers).map(|i| if i == 0 { (1..workers).collect() } else { vec![0] }).collect()
        }
    };
    let rule = match kind {
        TopologyKind::StarRegularized => WeightRule::Metropolis,
        _ => weight_rule,
    };
    let weights = match rule {
        WeightRule::UniformNeighbor => uniform_weights(&neighbors)?,
        WeightRule::Metropolis => metropolis_weights(&neighbors),
    };
    validate(&weights, CONSTRUCTION_TOL).expect("constructed mixing matrix is not doubly stochastic");
    let spectrum = spectrum_of(&weights);
    if spectrum.spectral_gap < ZERO_GAP_TOL {
        return Err(TopologyError::ZeroSpectralGap { rho: spectrum.spectral_gap });
    }
    Ok(Topology { kind: Some(kind), weight_rule: Some(rule), weights, neighbors, spectrum })
}

/// The most-square factorization `K = a * b` with `a <= b`.
pub fn grid_shape(workers: usize) -> (usize, usize) {
    let mut a = (workers as f64).sqrt() as usize;
    while a > 1 && workers % a != 0 {
        a -= 1;
    }
    let a = a.max(1);
    (a, workers / a)
}

fn ring_neighbors(k: usize) -> Vec<Vec<usize>> {
    (0..k)
        .map(|i| {
            let mut n = vec![(i + k - 1) % k, (i + 1) % k];
            n.retain(|&j| j != i);
            n.sort_unstable();
            n.dedup();
            n
        })
        .collect()
}

fn torus_neighbors(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let idx = |r: usize, c: usize| r * cols + c;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let me = idx(r, c);
            let mut n = vec![
                idx((r + rows - 1) % rows, c),
                idx((r + 1) % rows, c),
                idx(r, (c + cols - 1) % cols),
                idx(r, (c + 1) % cols),
            ];
            n.retain(|&j| j != me);
            n.sort_unstable();
            n.dedup();
            out.push(n);
        }
    }
    out
}

fn uniform_weights(neighbors: &[Vec<usize>]) -> Result<DMatrix<f64>, TopologyError> {
    let k = neighbors.len();
    let expected = neighbors[0].len();
    if let Some((node, n)) = neighbors.iter().enumerate().find(|(_, n)| n.len() != expected) {
        return Err(TopologyError::NotRegular { node, degree: n.len(), expected });
    }
    let w = 1.0 / (expected as f64 + 1.0);
    let mut m = DMatrix::zeros(k, k);
    for (i, n) in neighbors.iter().enumerate() {
        m[(i, i)] = w;
        for &j in n {
            m[(i, j)] = w;
        }
    }
    Ok(m)
}

fn metropolis_weights(neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let k = neighbors.len();
    let mut m = DMatrix::zeros(k, k);
    for (i, n) in neighbors.iter().enumerate() {
        for &j in n {
            m[(i, j)] = 1.0 / (1.0 + neighbors[i].len().max(neighbors[j].len()) as f64);
        }
    }
    for i in 0..k {
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = 1.0 - off;
    }
    m
}

/// Check that `w` is a symmetric doubly stochastic matrix.
pub fn validate(w: &DMatrix<f64>, tol: f64) -> Result<(), TopologyError> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(TopologyError::NoWorkers);
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = w[(i, j)];
            if !(-tol..=1.0 + tol).contains(&v) {
                return Err(TopologyError::EntryOutOfRange { row: i, col: j, value: v });
            }
            if j > i && (v - w[(j, i)]).abs() > tol {
                return Err(TopologyError::NotSymmetric { row: i, col: j, a: v, b: w[(j, i)] });
            }
        }
    }
    for i in 0..rows {
        let sum: f64 = w.row(i).iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(TopologyError::RowSum { row: i, sum });
        }
    }
    for j in 0..cols {
        let sum: f64 = w.column(j).iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(TopologyError::ColumnSum { col: j, sum });
        }
    }
    Ok(())
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn spectrum_of(w: &DMatrix<f64>) -> Spectrum {
    let eigenvalues = symmetric_eigenvalues(w);
    let mut moduli: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let second_eig_mod = moduli.get(1).copied().unwrap_or(0.0).min(1.0);
    Spectrum { eigenvalues, second_eig_mod, spectral_gap: 1.0 - second_eig_mod }
}

/// Second-largest eigenvalue modulus and spectral gap of a mixing matrix.
///
/// A disconnected `W` (for instance the identity) is not an error here; it
/// simply reports `rho = 0`. [`Topology::from_weights`] is what rejects it.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<Spectrum, TopologyError> {
    validate(w, VALIDATION_TOL)?;
    Ok(spectrum_of(w))
}

/// `||W - 11^T/K||_2`, computed from the eigenvalues of the symmetric difference.
pub fn deviation_from_average(w: &DMatrix<f64>) -> f64 {
    let k = w.nrows();
    let centered = w.map(|v| v - 1.0 / k as f64);
    symmetric_eigenvalues(&centered).into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Whether `||W - 11^T/K||_2 <= 1 - rho` holds (within `1e-10`).
pub fn check_averaging_contraction(w: &DMatrix<f64>) -> Result<bool, TopologyError> {
    let spec = spectral_gap(w)?;
    Ok(deviation_from_average(w) <= spec.second_eig_mod + VALIDATION_TOL)
}

impl Topology {
    /// Wrap a caller-supplied mixing matrix. The matrix is validated at
    /// [`VALIDATION_TOL`] and then symmetrized exactly.
    pub fn from_weights(w: DMatrix<f64>) -> Result<Self, TopologyError> {
        validate(&w, VALIDATION_TOL)?;
        let w = (&w + w.transpose()) * 0.5;
        let k = w.nrows();
        let neighbors = (0..k).map(|i| (0..k).filter(|&j| j != i && w[(i, j)] > 0.0).collect()).collect();
        let spectrum = spectrum_of(&w);
        if spectrum.spectral_gap < ZERO_GAP_TOL {
            return Err(TopologyError::ZeroSpectralGap { rho: spectrum.spectral_gap });
        }
        Ok(Topology { kind: None, weight_rule: None, weights: w, neighbors, spectrum })
    }

    pub fn num_workers(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Neighbors of `k` in ascending order, excluding `k` itself.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn kind(&self) -> Option<TopologyKind> {
        self.kind
    }

    pub fn weight_rule(&self) -> Option<WeightRule> {
        self.weight_rule
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn spectral_gap(&self) -> f64 {
        self.spectrum.spectral_gap
    }

    pub fn second_eig_mod(&self) -> f64 {
        self.spectrum.second_eig_mod
    }

    /// `max_i (1 - lambda_i)`, the spectral norm of `I - W`.
    pub fn laplacian_norm(&self) -> f64 {
        self.spectrum.eigenvalues.iter().fold(0.0, |acc, &l| acc.max(1.0 - l))
    }

    /// Total number of directed messages in one gossip round.
    pub fn directed_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn summary(&self) -> TopologySummary {
        TopologySummary {
            kind: self.kind,
            weight_rule: self.weight_rule,
            workers: self.num_workers(),
            second_eig_mod: self.spectrum.second_eig_mod,
            spectral_gap: self.spectrum.spectral_gap,
        }
    }

    pub fn report(&self) -> TopologyReport {
        let k = self.num_workers();
        TopologyReport {
            summary: self.summary(),
            weights: (0..k).map(|i| self.weights.row(i).iter().copied().collect()).collect(),
            eigenvalues: self.spectrum.eigenvalues.clone(),
            neighbors: self.neighbors.clone(),
            averaging_deviation: deviation_from_average(&self.weights),
        }
    }
}
