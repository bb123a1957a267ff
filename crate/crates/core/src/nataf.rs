//! Dependence modeling through the normal copula (Nataf transformation).
//!
//! A [`CorrelationModel`] holds the marginals of the physical random vector
//! `u`, the linear correlation matrix `ρ`, and the copula correlation `R`
//! whose entries solve the moment-matching double integral for each pair.
//! The forward map sends physical points to independent standard normal
//! coordinates (`w = F(u)`, `z = Φ⁻¹(w)`, `η = L⁻¹ z` with `R = LLᵀ`);
//! the inverse map runs the chain backwards and is the one used to turn
//! experimental-design samples into feeder inputs.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::dist::{DistError, Marginal};
use crate::orthopoly::{classical_basis, gauss_rule, OrthoError, QuadratureRule};
use crate::roots::brent;

/// Probability clamp keeping Φ⁻¹ finite at support boundaries.
const P_CLAMP: f64 = 1e-15;

/// Gauss–Hermite order per axis for the copula correlation integral.
const GH_ORDER: usize = 64;

#[derive(Debug, Error)]
pub enum NatafError {
    #[error("correlation matrix must be square and match the {0} marginals")]
    DimensionMismatch(usize),
    #[error("correlation matrix not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("correlation entry ({i}, {j}) = {value} outside [−1, 1] (unit diagonal required)")]
    InvalidEntry { i: usize, j: usize, value: f64 },
    #[error("target correlation {rho} between marginals {i} and {j} is infeasible for the pair")]
    InfeasibleCorrelation { i: usize, j: usize, rho: f64 },
    #[error("copula correlation matrix not positive definite even after eigenvalue repair")]
    NotPositiveDefinite,
    #[error("point component {index} = {value} outside marginal support")]
    OutsideSupport { index: usize, value: f64 },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    let d = statrs::distribution::Normal::new(0.0, 1.0).expect("valid");
    d.cdf(z)
}

/// Standard normal quantile, polished to `|Φ(z) − p| ≤ 1e-12`.
pub fn std_normal_inv_cdf(p: f64) -> f64 {
    Marginal::standard_normal().inv_cdf(p).expect("p in (0,1)")
}

/// Result of the forward transform; `clamped` marks points that sat at a
/// support boundary where the probability had to be clipped.
#[derive(Debug, Clone)]
pub struct ForwardPoint {
    pub eta: Vec<f64>,
    pub clamped: bool,
}

/// Marginals plus linear correlation, with the derived copula matrix and its
/// Cholesky factor. Immutable once built; transforms are pure.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    marginals: Vec<Marginal>,
    rho: DMatrix<f64>,
    r: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    repair_distance: f64,
}

impl CorrelationModel {
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn copula_r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn cholesky_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// Frobenius distance moved by the positive-definiteness repair
    /// (0 when none was needed).
    pub fn repair_distance(&self) -> f64 {
        self.repair_distance
    }

    /// Physical point → independent standard normal coordinates.
    pub fn forward(&self, u: &[f64]) -> Result<ForwardPoint, NatafError> {
        let n = self.dim();
        if u.len() != n {
            return Err(NatafError::DimensionMismatch(n));
        }
        let mut z = DVector::zeros(n);
        let mut clamped = false;
        for i in 0..n {
            let (lo, hi) = self.marginals[i].support();
            if u[i] < lo || u[i] > hi || !u[i].is_finite() {
                return Err(NatafError::OutsideSupport { index: i, value: u[i] });
            }
            let w = self.marginals[i].cdf(u[i])?;
            let wc = w.clamp(P_CLAMP, 1.0 - P_CLAMP);
            if wc != w {
                clamped = true;
            }
            z[i] = std_normal_inv_cdf(wc);
        }
        let eta = self
            .chol_l
            .solve_lower_triangular(&z)
            .expect("cholesky factor is nonsingular");
        Ok(ForwardPoint { eta: eta.iter().copied().collect(), clamped })
    }

    /// Independent standard normal coordinates → physical point.
    pub fn inverse(&self, eta: &[f64]) -> Result<Vec<f64>, NatafError> {
        let n = self.dim();
        if eta.len() != n {
            return Err(NatafError::DimensionMismatch(n));
        }
        let ev = DVector::from_column_slice(eta);
        let z = &self.chol_l * ev;
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            let w = std_normal_cdf(z[i]).clamp(P_CLAMP, 1.0 - P_CLAMP);
            u.push(self.marginals[i].inv_cdf(w)?);
        }
        Ok(u)
    }
}

/// Isoprobabilistic transformation `ξ = G⁻¹(Φ(η))` onto the standardized
/// marginal chosen for a polynomial dimension; identity for the standard
/// normal target.
pub fn iso_transform(eta: f64, target: &Marginal) -> Result<f64, NatafError> {
    if target.is_standard_normal() {
        return Ok(eta);
    }
    let w = std_normal_cdf(eta).clamp(P_CLAMP, 1.0 - P_CLAMP);
    Ok(target.inv_cdf(w)?)
}

/// Inverse isoprobabilistic transformation `η = Φ⁻¹(G(ξ))`.
pub fn iso_transform_inv(xi: f64, target: &Marginal) -> Result<f64, NatafError> {
    if target.is_standard_normal() {
        return Ok(xi);
    }
    let w = target.cdf(xi)?.clamp(P_CLAMP, 1.0 - P_CLAMP);
    Ok(std_normal_inv_cdf(w))
}

/// Builds the copula model: validates `ρ`, solves the pairwise correlation
/// equation for every off-diagonal entry, repairs indefiniteness by
/// eigenvalue clipping and factors the result.
pub fn build_correlation_model(
    marginals: Vec<Marginal>,
    rho: DMatrix<f64>,
) -> Result<CorrelationModel, NatafError> {
    let n = marginals.len();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(NatafError::DimensionMismatch(n));
    }
    for m in &marginals {
        m.validate()?;
    }
    for i in 0..n {
        if (rho[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(NatafError::InvalidEntry { i, j: i, value: rho[(i, i)] });
        }
        for j in (i + 1)..n {
            if (rho[(i, j)] - rho[(j, i)]).abs() > 1e-10 {
                return Err(NatafError::NotSymmetric(i, j));
            }
            if rho[(i, j)].abs() > 1.0 {
                return Err(NatafError::InvalidEntry { i, j, value: rho[(i, j)] });
            }
        }
    }

    let gh = gauss_rule(&classical_basis(&Marginal::standard_normal(), GH_ORDER + 1)?, GH_ORDER)?;

    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let target = rho[(i, j)];
            let rij = solve_pair_correlation(&marginals[i], &marginals[j], target, &gh)
                .ok_or(NatafError::InfeasibleCorrelation { i, j, rho: target })?;
            r[(i, j)] = rij;
            r[(j, i)] = rij;
        }
    }

    let (r, repair_distance) = repair_positive_definite(r)?;
    let chol = nalgebra::Cholesky::new(r.clone()).ok_or(NatafError::NotPositiveDefinite)?;
    Ok(CorrelationModel { marginals, rho, r, chol_l: chol.l(), repair_distance })
}

/// Solves `ρ_target = E[g_i(Z₁) g_j(R Z₁ + √(1−R²) Z₂)]` for `R`, where
/// `g = (F⁻¹∘Φ − μ)/σ` standardizes each marginal. Normal pairs map
/// identically, so they short-circuit to `R = ρ`.
fn solve_pair_correlation(
    mi: &Marginal,
    mj: &Marginal,
    target: f64,
    gh: &QuadratureRule,
) -> Option<f64> {
    if target == 0.0 {
        return Some(0.0);
    }
    if matches!(mi, Marginal::Normal { .. }) && matches!(mj, Marginal::Normal { .. }) {
        return Some(target);
    }
    let gi = standardized_quantiles(mi, gh);
    let gj_of = |z: f64| -> f64 {
        let (mean, var) = mj.moments();
        let w = std_normal_cdf(z).clamp(P_CLAMP, 1.0 - P_CLAMP);
        (mj.inv_cdf(w).expect("clamped") - mean) / var.sqrt()
    };
    let pearson_of = |r: f64| -> f64 {
        let s = (1.0 - r * r).max(0.0).sqrt();
        let mut acc = 0.0;
        for (a, (&za, &wa)) in gh.nodes.iter().zip(&gh.weights).enumerate() {
            let mut inner = 0.0;
            for (&zb, &wb) in gh.nodes.iter().zip(&gh.weights) {
                inner += wb * gj_of(r * za + s * zb);
            }
            acc += wa * gi[a] * inner;
        }
        acc
    };
    brent(|r| pearson_of(r) - target, -0.999, 0.999, 1e-12, 1e-10, 200)
}

fn standardized_quantiles(m: &Marginal, gh: &QuadratureRule) -> Vec<f64> {
    let (mean, var) = m.moments();
    let sd = var.sqrt();
    gh.nodes
        .iter()
        .map(|&z| {
            let w = std_normal_cdf(z).clamp(P_CLAMP, 1.0 - P_CLAMP);
            (m.inv_cdf(w).expect("clamped") - mean) / sd
        })
        .collect()
}

/// Clips eigenvalues at 1e-10 and renormalizes the diagonal; returns the
/// repaired matrix and the Frobenius distance moved.
fn repair_positive_definite(r: DMatrix<f64>) -> Result<(DMatrix<f64>, f64), NatafError> {
    if nalgebra::Cholesky::new(r.clone()).is_some() {
        return Ok((r, 0.0));
    }
    let n = r.nrows();
    let eig = nalgebra::SymmetricEigen::new(r.clone());
    let clipped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(1e-10)));
    let mut fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // renormalize to a unit diagonal
    let scale: Vec<f64> = (0..n).map(|i| fixed[(i, i)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            fixed[(i, j)] /= scale[i] * scale[j];
        }
    }
    let dist = (&fixed - &r).norm();
    Ok((fixed, dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn identity_rho(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn independent_inputs_map_componentwise() {
        let marginals = vec![
            Marginal::Weibull { shape: 2.0, scale: 1.0 },
            Marginal::standard_normal(),
        ];
        let cm = build_correlation_model(marginals.clone(), identity_rho(2)).unwrap();
        assert_eq!(cm.copula_r(), &identity_rho(2));
        let u = vec![0.7, -0.3];
        let fwd = cm.forward(&u).unwrap();
        assert!(!fwd.clamped);
        for i in 0..2 {
            let expect = std_normal_inv_cdf(marginals[i].cdf(u[i]).unwrap());
            assert_abs_diff_eq!(fwd.eta[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_normal_marginals_keep_rho() {
        let marginals = vec![
            Marginal::Normal { mean: 1.0, stdev: 0.2 },
            Marginal::Normal { mean: -2.0, stdev: 3.0 },
            Marginal::Normal { mean: 0.0, stdev: 1.0 },
        ];
        let mut rho = identity_rho(3);
        rho[(0, 1)] = 0.4;
        rho[(1, 0)] = 0.4;
        rho[(0, 2)] = -0.3;
        rho[(2, 0)] = -0.3;
        let cm = build_correlation_model(marginals, rho.clone()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(cm.copula_r()[(i, j)], rho[(i, j)], epsilon = 1e-12);
            }
        }
        // η = 0 maps back to the means
        let u = cm.inverse(&[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(u[1], -2.0, epsilon = 1e-10);
    }

    #[test]
    fn weibull_median_at_origin() {
        let cm = build_correlation_model(
            vec![Marginal::Weibull { shape: 2.0, scale: 1.0 }],
            identity_rho(1),
        )
        .unwrap();
        let u = cm.inverse(&[0.0]).unwrap();
        assert_abs_diff_eq!(u[0], (2.0f64.ln()).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let marginals = vec![
            Marginal::Weibull { shape: 7.41, scale: 2.06 },
            Marginal::Beta { alpha: 2.06, beta: 2.50, lo: 0.0, hi: 1000.0 },
            Marginal::Normal { mean: 100.0, stdev: 5.0 },
        ];
        let mut rho = identity_rho(3);
        for (i, j, v) in [(0usize, 1usize, 0.5), (0, 2, 0.2), (1, 2, 0.4)] {
            rho[(i, j)] = v;
            rho[(j, i)] = v;
        }
        let cm = build_correlation_model(marginals, rho).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let eta: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let u = cm.inverse(&eta).unwrap();
            let back = cm.forward(&u).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(back.eta[i], eta[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn monotone_in_each_coordinate() {
        // the pre-decorrelation stage u_i ↦ z_i is strictly increasing
        let m = Marginal::Beta { alpha: 2.06, beta: 2.50, lo: 0.0, hi: 1000.0 };
        let mut last = f64::NEG_INFINITY;
        for k in 1..200 {
            let u = 1000.0 * k as f64 / 200.0;
            let z = std_normal_inv_cdf(m.cdf(u).unwrap().clamp(P_CLAMP, 1.0 - P_CLAMP));
            assert!(z > last);
            last = z;
        }
    }

    #[test]
    fn pair_correlation_reproduced_by_sampling() {
        // Weibull(2,1) pair at ρ = 0.5: push 10⁶ correlated normal pairs
        // through the inverse map and compare the sampled Pearson
        // correlation with the target.
        let marginals = vec![
            Marginal::Weibull { shape: 2.0, scale: 1.0 },
            Marginal::Weibull { shape: 2.0, scale: 1.0 },
        ];
        let mut rho = identity_rho(2);
        rho[(0, 1)] = 0.5;
        rho[(1, 0)] = 0.5;
        let cm = build_correlation_model(marginals, rho).unwrap();
        let r12 = cm.copula_r()[(0, 1)];
        assert!(r12 > 0.5, "copula correlation should exceed the target for these marginals");

        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 1_000_000usize;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let eta = [
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ];
            let u = cm.inverse(&eta).unwrap();
            sx += u[0];
            sy += u[1];
            sxx += u[0] * u[0];
            syy += u[1] * u[1];
            sxy += u[0] * u[1];
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf).powi(2);
        let vy = syy / nf - (sy / nf).powi(2);
        let pearson = cov / (vx * vy).sqrt();
        assert!((pearson - 0.5).abs() < 0.005, "sampled correlation {pearson}");
    }

    #[test]
    fn iso_transform_cases() {
        assert_abs_diff_eq!(iso_transform(1.3, &Marginal::standard_normal()).unwrap(), 1.3);
        assert_abs_diff_eq!(
            iso_transform(0.0, &Marginal::Uniform { lo: -1.0, hi: 1.0 }).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let beta = Marginal::Beta { alpha: 2.06, beta: 2.50, lo: -1.0, hi: 1.0 };
        assert_abs_diff_eq!(
            iso_transform(0.0, &beta).unwrap(),
            beta.inv_cdf(0.5).unwrap(),
            epsilon = 1e-12
        );
        // round trip
        let xi = iso_transform(0.83, &beta).unwrap();
        assert_abs_diff_eq!(iso_transform_inv(xi, &beta).unwrap(), 0.83, epsilon = 1e-9);
    }

    #[test]
    fn invalid_rho_rejected() {
        let m = vec![Marginal::standard_normal(), Marginal::standard_normal()];
        let mut rho = identity_rho(2);
        rho[(0, 1)] = 1.2;
        rho[(1, 0)] = 1.2;
        assert!(matches!(
            build_correlation_model(m.clone(), rho),
            Err(NatafError::InvalidEntry { .. })
        ));
        let mut asym = identity_rho(2);
        asym[(0, 1)] = 0.3;
        assert!(matches!(
            build_correlation_model(m, asym),
            Err(NatafError::NotSymmetric(0, 1))
        ));
    }

    #[test]
    fn boundary_points_clamped_and_flagged() {
        let cm = build_correlation_model(
            vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }],
            identity_rho(1),
        )
        .unwrap();
        let f = cm.forward(&[0.0]).unwrap();
        assert!(f.clamped);
        assert!(f.eta[0].is_finite());
        assert!(cm.forward(&[-0.1]).is_err());
    }
}
