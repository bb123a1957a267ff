//! Orthonormal univariate polynomial bases and Gaussian quadrature.
//!
//! Bases are stored through their three-term recurrence coefficients
//! `d_k` (centers) and `b_k` (squared norms ratios), in the orthonormal
//! convention
//!
//! ```text
//! √(b_{k+1}) φ_{k+1}(x) = (x − d_k) φ_k(x) − √(b_k) φ_{k−1}(x),
//! φ_{−1} = 0,  φ_0 = 1,
//! ```
//!
//! so that `⟨φ_i, φ_j⟩ = δ_ij` under the marginal's density. Classical
//! families (Hermite, Legendre, Jacobi, Laguerre) are mapped affinely to the
//! marginal's actual parameters; anything else goes through the discretized
//! Stieltjes procedure. Quadrature rules come from the Golub–Welsch
//! eigen-decomposition of the Jacobi matrix; their weights sum to one since
//! the underlying weight is a probability density.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Family, Marginal};

#[derive(Debug, Error)]
pub enum OrthoError {
    #[error("no classical polynomial family for {0:?} marginals")]
    UnsupportedFamily(Family),
    #[error("degree {degree} exceeds basis maximum {max}")]
    DegreeOutOfRange { degree: usize, max: usize },
    #[error("nonpositive recurrence norm b_{k} = {value}; quadrature resolution insufficient or weight degenerate")]
    NonPositiveNorm { k: usize, value: f64 },
    #[error("quadrature rule needs {nodes} nodes but the basis holds {max} recurrence rows")]
    InsufficientRecurrence { nodes: usize, max: usize },
    #[error("orthonormality check failed: max Gram deviation {0:.3e}")]
    OrthonormalityFailed(f64),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Tag recording how a basis was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Hermite,
    Legendre,
    Jacobi,
    Laguerre,
    GeneralizedLaguerre,
    Stieltjes,
}

/// Orthonormal polynomial basis for one marginal, up to `max_degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis1D {
    marginal: Marginal,
    max_degree: usize,
    /// Recurrence centers d_0 .. d_{p_max}.
    recur_a: Vec<f64>,
    /// Norm ratios b_0 .. b_{p_max}; b_0 = 1 for a probability weight.
    recur_b: Vec<f64>,
    kind: BasisKind,
}

/// Nodes and probability weights of a Gaussian rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl PolyBasis1D {
    pub fn marginal(&self) -> &Marginal {
        &self.marginal
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn recurrence(&self) -> (&[f64], &[f64]) {
        (&self.recur_a, &self.recur_b)
    }

    /// Value of the orthonormal degree-`k` polynomial at `x`.
    pub fn eval(&self, k: usize, x: f64) -> Result<f64, OrthoError> {
        if k > self.max_degree {
            return Err(OrthoError::DegreeOutOfRange { degree: k, max: self.max_degree });
        }
        let mut prev = 0.0f64;
        let mut cur = 1.0f64;
        for j in 0..k {
            let next = ((x - self.recur_a[j]) * cur - self.recur_b[j].sqrt() * prev)
                / self.recur_b[j + 1].sqrt();
            prev = cur;
            cur = next;
        }
        Ok(cur)
    }

    /// Values of degrees `0..=upto` at `x` in one recurrence sweep.
    pub fn eval_all(&self, upto: usize, x: f64) -> Result<Vec<f64>, OrthoError> {
        if upto > self.max_degree {
            return Err(OrthoError::DegreeOutOfRange { degree: upto, max: self.max_degree });
        }
        let mut out = Vec::with_capacity(upto + 1);
        let mut prev = 0.0f64;
        let mut cur = 1.0f64;
        out.push(cur);
        for j in 0..upto {
            let next = ((x - self.recur_a[j]) * cur - self.recur_b[j].sqrt() * prev)
                / self.recur_b[j + 1].sqrt();
            prev = cur;
            cur = next;
            out.push(cur);
        }
        Ok(out)
    }
}

/// Classical orthonormal basis for the marginal's family, affinely mapped to
/// its parameters. Fails for families without a classical match (Weibull).
pub fn classical_basis(m: &Marginal, p_max: usize) -> Result<PolyBasis1D, OrthoError> {
    m.validate()?;
    // monic recurrence (d_k, b_k) for the standardized weight, then the
    // affine map x = shift + scale·t transforms d → shift + scale·d,
    // b_0 → 1, b_k → scale²·b_k
    let n = p_max + 1;
    let (mut d, mut b, kind, shift, scale) = match *m {
        Marginal::Normal { mean, stdev } => {
            let d = vec![0.0; n];
            let mut bb = vec![1.0];
            bb.extend((1..n).map(|k| k as f64));
            (d, bb, BasisKind::Hermite, mean, stdev)
        }
        Marginal::Uniform { lo, hi } => {
            let d = vec![0.0; n];
            let mut bb = vec![1.0];
            bb.extend((1..n).map(|k| {
                let k = k as f64;
                k * k / ((2.0 * k - 1.0) * (2.0 * k + 1.0))
            }));
            (d, bb, BasisKind::Legendre, (lo + hi) / 2.0, (hi - lo) / 2.0)
        }
        Marginal::Beta { alpha, beta, lo, hi } => {
            // weight (1−t)^a (1+t)^b on [−1, 1] with a = β−1, b = α−1
            let a = beta - 1.0;
            let bj = alpha - 1.0;
            let (d, bb) = jacobi_recurrence(a, bj, n);
            (d, bb, BasisKind::Jacobi, (lo + hi) / 2.0, (hi - lo) / 2.0)
        }
        Marginal::Exponential => {
            let d: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
            let mut bb = vec![1.0];
            bb.extend((1..n).map(|k| (k * k) as f64));
            (d, bb, BasisKind::Laguerre, 0.0, 1.0)
        }
        Marginal::Gamma { shape } => {
            // weight x^s e^{−x} / Γ(s+1) with s = shape − 1
            let s = shape - 1.0;
            let d: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + s + 1.0).collect();
            let mut bb = vec![1.0];
            bb.extend((1..n).map(|k| k as f64 * (k as f64 + s)));
            (d, bb, BasisKind::GeneralizedLaguerre, 0.0, 1.0)
        }
        Marginal::Weibull { .. } => return Err(OrthoError::UnsupportedFamily(m.family())),
    };
    for v in d.iter_mut() {
        *v = shift + scale * *v;
    }
    for v in b.iter_mut().skip(1) {
        *v *= scale * scale;
    }
    Ok(PolyBasis1D { marginal: m.clone(), max_degree: p_max, recur_a: d, recur_b: b, kind })
}

/// Monic Jacobi recurrence for weight (1−x)^a (1+x)^b normalized to mass 1.
fn jacobi_recurrence(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dv = Vec::with_capacity(n);
    let mut bv = Vec::with_capacity(n);
    for k in 0..n {
        let kf = k as f64;
        let dk = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * kf + a + b) * (2.0 * kf + a + b + 2.0))
        };
        let bk = if k == 0 {
            1.0
        } else if k == 1 {
            4.0 * (1.0 + a) * (1.0 + b) / ((a + b + 2.0).powi(2) * (a + b + 3.0))
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + a + b)
                / ((2.0 * kf + a + b).powi(2) * (2.0 * kf + a + b + 1.0) * (2.0 * kf + a + b - 1.0))
        };
        dv.push(dk);
        bv.push(bk);
    }
    (dv, bv)
}

/// Recurrence coefficients by the discretized Stieltjes procedure.
///
/// The weight is discretized either with the family's own Gaussian rule
/// (exact inner products) or, when none exists, with composite
/// Gauss–Legendre panels over the support truncated at the 1e-14 density
/// quantiles. `quad_order` is the total node budget and must be at least
/// `2·p_max + 1`.
pub fn stieltjes_basis(m: &Marginal, p_max: usize, quad_order: usize) -> Result<PolyBasis1D, OrthoError> {
    m.validate()?;
    assert!(
        quad_order >= 2 * p_max + 1,
        "stieltjes_basis needs quad_order ≥ 2·p_max + 1"
    );
    let (nodes, weights) = discretize_weight(m, quad_order)?;
    stieltjes_from_measure(m, p_max, &nodes, &weights)
}

/// Stieltjes with the default node budget `4·p_max`, doubling the
/// discretization (twice at most) until the orthonormality check passes.
pub fn stieltjes_basis_auto(m: &Marginal, p_max: usize) -> Result<PolyBasis1D, OrthoError> {
    let base = (4 * p_max).max(2 * p_max + 1).max(16);
    let mut last_err = None;
    for attempt in 0..3 {
        let order = base << attempt;
        match stieltjes_basis(m, p_max, order) {
            Ok(basis) => {
                let dev = gram_deviation(&basis, 2 * order)?;
                if dev < 1e-8 {
                    return Ok(basis);
                }
                last_err = Some(OrthoError::OrthonormalityFailed(dev));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Classical basis when the family has one, Stieltjes otherwise.
pub fn basis_for(m: &Marginal, p_max: usize) -> Result<PolyBasis1D, OrthoError> {
    match classical_basis(m, p_max) {
        Err(OrthoError::UnsupportedFamily(_)) => stieltjes_basis_auto(m, p_max),
        other => other,
    }
}

fn stieltjes_from_measure(
    m: &Marginal,
    p_max: usize,
    nodes: &[f64],
    weights: &[f64],
) -> Result<PolyBasis1D, OrthoError> {
    let q = nodes.len();
    let mut d = Vec::with_capacity(p_max + 1);
    let mut b: Vec<f64> = Vec::with_capacity(p_max + 1);
    let mass: f64 = weights.iter().sum();
    b.push(1.0);
    // orthonormal polynomial values at the nodes; the discrete measure is
    // renormalized so b_0 = 1 exactly
    let mut prev = vec![0.0f64; q];
    let mut cur = vec![1.0 / mass.sqrt(); q];
    let w: Vec<f64> = weights.to_vec();
    for k in 0..=p_max {
        let dk: f64 = (0..q).map(|i| w[i] * nodes[i] * cur[i] * cur[i]).sum();
        d.push(dk);
        if k == p_max {
            break;
        }
        let sb = b[k].sqrt();
        let mut next = vec![0.0f64; q];
        for i in 0..q {
            next[i] = (nodes[i] - dk) * cur[i] - if k > 0 { sb * prev[i] } else { 0.0 };
        }
        let bk1: f64 = (0..q).map(|i| w[i] * next[i] * next[i]).sum();
        if !(bk1 > 0.0) || !bk1.is_finite() {
            return Err(OrthoError::NonPositiveNorm { k: k + 1, value: bk1 });
        }
        b.push(bk1);
        let sb1 = bk1.sqrt();
        for v in next.iter_mut() {
            *v /= sb1;
        }
        prev = cur;
        cur = next;
    }
    Ok(PolyBasis1D {
        marginal: m.clone(),
        max_degree: p_max,
        recur_a: d,
        recur_b: b,
        kind: BasisKind::Stieltjes,
    })
}

/// Discrete approximation `{(x_q, w_q)}` of `∫ · f(x) dx`.
fn discretize_weight(m: &Marginal, quad_order: usize) -> Result<(Vec<f64>, Vec<f64>), OrthoError> {
    if classical_basis(m, 0).is_ok() {
        // The family's own Gauss rule integrates the Stieltjes inner
        // products exactly. Capped at 32 nodes: a 32-node rule is already
        // exact through degree 63, and Golub–Welsch weights at the extreme
        // nodes of unbounded weights lose absolute precision beyond that.
        let order = quad_order.min(32);
        let basis = classical_basis(m, order + 1)?;
        let rule = gauss_rule(&basis, order)?;
        return Ok((rule.nodes, rule.weights));
    }
    // composite Gauss–Legendre against the explicit density
    let lo = m.inv_cdf(1e-14)?;
    let hi = m.inv_cdf(1.0 - 1e-14)?;
    let per_panel = 16usize;
    let panels = quad_order.div_ceil(per_panel).max(4);
    let gl = gauss_rule(
        &classical_basis(&Marginal::Uniform { lo: -1.0, hi: 1.0 }, per_panel + 1)?,
        per_panel,
    )?;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    let h = (hi - lo) / panels as f64;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
            // gl carries the uniform probability weight (density 1/2); undo
            // it and apply the panel jacobian and the marginal density
            let x = a + (t + 1.0) / 2.0 * h;
            nodes.push(x);
            weights.push(w * h * m.pdf(x)?);
        }
    }
    Ok((nodes, weights))
}

/// Gauss rule from the basis' Jacobi matrix (Golub–Welsch).
pub fn gauss_rule(basis: &PolyBasis1D, n_nodes: usize) -> Result<QuadratureRule, OrthoError> {
    if n_nodes == 0 || n_nodes > basis.max_degree {
        return Err(OrthoError::InsufficientRecurrence { nodes: n_nodes, max: basis.max_degree });
    }
    let mut j = DMatrix::<f64>::zeros(n_nodes, n_nodes);
    for i in 0..n_nodes {
        j[(i, i)] = basis.recur_a[i];
        if i + 1 < n_nodes {
            let off = basis.recur_b[i + 1].sqrt();
            j[(i, i + 1)] = off;
            j[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n_nodes)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let w = basis.recur_b[0] * eig.eigenvectors[(0, k)].powi(2);
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Max deviation of the Gram matrix from identity, measured with an
/// independent discretization of `extra_order` nodes.
pub fn gram_deviation(basis: &PolyBasis1D, extra_order: usize) -> Result<f64, OrthoError> {
    let p = basis.max_degree;
    let (nodes, weights) = discretize_weight(basis.marginal(), extra_order.max(2 * p + 2))?;
    let mut gram = DMatrix::<f64>::zeros(p + 1, p + 1);
    for (&x, &w) in nodes.iter().zip(&weights) {
        let vals = basis.eval_all(p, x)?;
        for i in 0..=p {
            for j in i..=p {
                gram[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    let mut dev = 0.0f64;
    for i in 0..=p {
        for j in i..=p {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    Ok(dev)
}
