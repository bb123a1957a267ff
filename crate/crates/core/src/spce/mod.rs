//! Adaptive sparse polynomial chaos engine.
//!
//! The expansion `Y ≈ Σ_k c_k Ψ_k(ξ)` uses multivariate polynomials built as
//! tensor products of the per-dimension orthonormal bases, with multi-index
//! sets truncated by the hyperbolic q-norm rule. Model selection is hybrid:
//! least angle regression orders the candidate terms, every path prefix is
//! scored by the corrected leave-one-out error, and the winning prefix is
//! refit by ordinary least squares so the reported coefficients satisfy the
//! normal equations of the retained basis exactly.

mod adaptive;
mod indices;
mod lar;
mod regression;

pub use adaptive::{adaptive_fit, SpceConfig};
pub use indices::build_index_set;
pub use lar::lar_path;
pub use regression::{corrected_loo, ols_fit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orthopoly::{OrthoError, PolyBasis1D};

#[derive(Debug, Error)]
pub enum SpceError {
    #[error("design matrix rank deficient (condition estimate {0:.3e})")]
    RankDeficient(f64),
    #[error("experimental design has zero response variance")]
    ZeroVariance,
    #[error("leave-one-out needs more samples than retained terms (M = {m}, P = {p})")]
    TooFewSamples { m: usize, p: usize },
    #[error("exact leverage point (h_i = {0}); experimental design degenerate")]
    LeveragePoint(f64),
    #[error("multi-index degree {degree} exceeds basis maximum {max} in dimension {dim}")]
    DegreeOverflow { dim: usize, degree: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no candidate model attained a finite corrected leave-one-out error")]
    NoUsableModel,
    #[error(transparent)]
    Ortho(#[from] OrthoError),
}

/// Multi-index `a = (a_1, …, a_n)`; `a_i` is the polynomial degree used in
/// dimension `i` of one tensor-product term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn interactions(&self) -> usize {
        self.0.iter().filter(|&&a| a > 0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// Hyperbolic quasi-norm `(Σ a_i^q)^{1/q}`.
    pub fn q_norm(&self, q: f64) -> f64 {
        let s: f64 = self.0.iter().map(|&a| (a as f64).powf(q)).sum();
        s.powf(1.0 / q)
    }
}

/// Experimental design: standardized samples with their responses.
#[derive(Debug, Clone)]
pub struct EdSet {
    /// `M × n` matrix of standardized samples ξ.
    pub xi: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl EdSet {
    pub fn new(xi: DMatrix<f64>, y: Vec<f64>) -> Result<Self, SpceError> {
        if xi.nrows() != y.len() {
            return Err(SpceError::DimensionMismatch(format!(
                "{} sample rows vs {} responses",
                xi.nrows(),
                y.len()
            )));
        }
        Ok(EdSet { xi, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }

    /// Unbiased empirical response variance σ_Y².
    pub fn sigma_y2(&self) -> f64 {
        let m = self.y.len();
        if m < 2 {
            return 0.0;
        }
        let mean = self.y.iter().sum::<f64>() / m as f64;
        self.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
    }
}

/// A fitted sparse polynomial chaos model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PceModel {
    pub dim: usize,
    pub bases: Vec<PolyBasis1D>,
    /// Retained terms: the zero index first, then LAR entry order.
    pub active_set: Vec<MultiIndex>,
    pub coeffs: Vec<f64>,
    /// Candidate degree of the winning expansion.
    pub degree: usize,
    pub q_norm: f64,
    pub err_loo: f64,
    pub err_cloo: f64,
    pub ed_size: usize,
    /// Whether the target accuracy was reached (as opposed to stopping on
    /// the non-improvement rule or the degree cap).
    pub converged: bool,
}

impl PceModel {
    /// Σ_k c_k Ψ_k(ξ).
    pub fn eval(&self, xi: &[f64]) -> f64 {
        assert_eq!(xi.len(), self.dim, "sample dimension mismatch");
        let max_deg: Vec<usize> = (0..self.dim)
            .map(|i| self.active_set.iter().map(|a| a.0[i] as usize).max().unwrap_or(0))
            .collect();
        let tables: Vec<Vec<f64>> = (0..self.dim)
            .map(|i| {
                self.bases[i]
                    .eval_all(max_deg[i], xi[i])
                    .expect("active set degrees within basis range")
            })
            .collect();
        let mut acc = 0.0;
        for (a, &c) in self.active_set.iter().zip(&self.coeffs) {
            let mut term = c;
            for (i, &deg) in a.0.iter().enumerate() {
                if deg > 0 {
                    term *= tables[i][deg as usize];
                }
            }
            acc += term;
        }
        acc
    }

    /// Analytic surrogate moments: mean is the constant coefficient, the
    /// variance is the sum of the squared non-constant coefficients
    /// (orthonormal bases).
    pub fn moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut var = 0.0;
        for (a, &c) in self.active_set.iter().zip(&self.coeffs) {
            if a.is_zero() {
                mean = c;
            } else {
                var += c * c;
            }
        }
        (mean, var)
    }

    pub fn retained_terms(&self) -> usize {
        self.active_set.len()
    }
}

/// Design matrix `H[l][k] = Ψ_k(ξ^{(l)})` for the given index list.
pub fn assemble_design_matrix(
    bases: &[PolyBasis1D],
    indices: &[MultiIndex],
    xi: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SpceError> {
    let n = bases.len();
    if xi.ncols() != n {
        return Err(SpceError::DimensionMismatch(format!(
            "{} sample columns vs {} bases",
            xi.ncols(),
            n
        )));
    }
    let mut max_deg = vec![0usize; n];
    for a in indices {
        if a.dim() != n {
            return Err(SpceError::DimensionMismatch(format!(
                "index dimension {} vs {} bases",
                a.dim(),
                n
            )));
        }
        for (i, &d) in a.0.iter().enumerate() {
            let d = d as usize;
            if d > bases[i].max_degree() {
                return Err(SpceError::DegreeOverflow {
                    dim: i,
                    degree: d,
                    max: bases[i].max_degree(),
                });
            }
            max_deg[i] = max_deg[i].max(d);
        }
    }
    let m = xi.nrows();
    let mut h = DMatrix::zeros(m, indices.len());
    for l in 0..m {
        let tables: Vec<Vec<f64>> = (0..n)
            .map(|i| bases[i].eval_all(max_deg[i], xi[(l, i)]))
            .collect::<Result<_, _>>()?;
        for (k, a) in indices.iter().enumerate() {
            let mut v = 1.0;
            for (i, &deg) in a.0.iter().enumerate() {
                if deg > 0 {
                    v *= tables[i][deg as usize];
                }
            }
            h[(l, k)] = v;
        }
    }
    Ok(h)
}
