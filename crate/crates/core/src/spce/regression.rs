//! Least-squares fitting and the corrected leave-one-out error.

use nalgebra::{DMatrix, DVector};

use super::SpceError;

/// Least-squares coefficients of `H c ≈ y`, solved through the SVD (the
/// normal-equation closed form is the contract, not the algorithm).
pub fn ols_fit(h: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>, SpceError> {
    let m = h.nrows();
    let p = h.ncols();
    if m < p {
        return Err(SpceError::TooFewSamples { m, p });
    }
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(SpceError::RankDeficient(cond));
    }
    let rhs = DVector::from_column_slice(y);
    let sol = svd.solve(&rhs, 0.0).map_err(|_| SpceError::RankDeficient(cond))?;
    Ok(sol.iter().copied().collect())
}

/// Leave-one-out error from hat-matrix leverages plus its finite-sample
/// corrected variant:
///
/// ```text
/// ε_loo  = (1/M) Σ_i [(y_i − ŷ_i)/(1 − h_i)]² / σ_Y²
/// ε_cloo = ε_loo · M/(M−P) · (1 + tr[(HᵀH)⁻¹])
/// ```
pub fn corrected_loo(
    h: &DMatrix<f64>,
    coeffs: &[f64],
    y: &[f64],
) -> Result<(f64, f64), SpceError> {
    let m = h.nrows();
    let p = h.ncols();
    if m <= p {
        return Err(SpceError::TooFewSamples { m, p });
    }
    let sigma2 = variance(y);
    if !(sigma2 > 0.0) || effectively_zero(sigma2, y) {
        return Err(SpceError::ZeroVariance);
    }
    let qr = h.clone().qr();
    let q = qr.q();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)].abs() < 1e-14 * m as f64 {
            return Err(SpceError::RankDeficient(f64::INFINITY));
        }
    }
    // tr[(HᵀH)⁻¹] = ‖R⁻¹‖_F²
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(SpceError::RankDeficient(f64::INFINITY))?;
    let trace_inv = rinv.iter().map(|v| v * v).sum::<f64>();

    let c = DVector::from_column_slice(coeffs);
    let fitted = h * c;
    let mut acc = 0.0;
    for i in 0..m {
        let hi: f64 = q.row(i).iter().map(|v| v * v).sum();
        if hi >= 1.0 - 1e-12 {
            return Err(SpceError::LeveragePoint(hi));
        }
        let e = (y[i] - fitted[i]) / (1.0 - hi);
        acc += e * e;
    }
    let err_loo = acc / m as f64 / sigma2;
    let t = m as f64 / (m - p) as f64 * (1.0 + trace_inv);
    Ok((err_loo, err_loo * t))
}

pub(super) fn variance(y: &[f64]) -> f64 {
    let m = y.len();
    if m < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / m as f64;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
}

/// A variance below the round-off floor of the response scale counts as
/// zero (a literally constant vector rarely sums exactly).
pub(super) fn effectively_zero(sigma2: f64, y: &[f64]) -> bool {
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    sigma2 <= (1e-13 * scale).powi(2)
}

/// Incremental prefix scorer used by the adaptive loop: columns are appended
/// in LAR entry order and after each append the leave-one-out indices of the
/// growing OLS model are available at O(M) cost, via a thin QR maintained by
/// modified Gram–Schmidt with reorthogonalization.
pub(super) struct PrefixEvaluator {
    m: usize,
    sigma2: f64,
    q_cols: Vec<DVector<f64>>,
    /// R⁻¹ columns (upper triangular, grown one column per append).
    r_inv_cols: Vec<DVector<f64>>,
    fro2_rinv: f64,
    h_diag: Vec<f64>,
    resid: DVector<f64>,
}

pub(super) struct PrefixScore {
    pub err_loo: f64,
    pub err_cloo: f64,
}

impl PrefixEvaluator {
    pub fn new(y: &[f64]) -> Result<Self, SpceError> {
        let sigma2 = variance(y);
        if !(sigma2 > 0.0) || effectively_zero(sigma2, y) {
            return Err(SpceError::ZeroVariance);
        }
        Ok(PrefixEvaluator {
            m: y.len(),
            sigma2,
            q_cols: Vec::new(),
            r_inv_cols: Vec::new(),
            fro2_rinv: 0.0,
            h_diag: vec![0.0; y.len()],
            resid: DVector::from_column_slice(y),
        })
    }

    pub fn terms(&self) -> usize {
        self.q_cols.len()
    }

    /// Appends a column; `None` when the column is numerically inside the
    /// current span (the prefix path must stop there).
    pub fn push_column(&mut self, col: &DVector<f64>) -> Option<()> {
        let t = self.q_cols.len();
        let scale = col.norm();
        if !(scale > 0.0) {
            return None;
        }
        let mut v = col.clone();
        let mut proj = DVector::<f64>::zeros(t.max(1));
        if t > 0 {
            proj = DVector::zeros(t);
            for _pass in 0..2 {
                for (k, qk) in self.q_cols.iter().enumerate() {
                    let g = qk.dot(&v);
                    proj[k] += g;
                    v -= qk * g;
                }
            }
        }
        let rho = v.norm();
        if rho <= 1e-10 * scale {
            return None;
        }
        v /= rho;

        // R⁻¹ grows by the column [−R⁻¹ r / ρ; 1/ρ]
        let mut new_col = DVector::zeros(t + 1);
        if t > 0 {
            let mut top = DVector::<f64>::zeros(t);
            for (k, ric) in self.r_inv_cols.iter().enumerate() {
                // R⁻¹ r = Σ_k r_k · (R⁻¹ e_k)
                for i in 0..=k {
                    top[i] += ric[i] * proj[k];
                }
            }
            for i in 0..t {
                new_col[i] = -top[i] / rho;
            }
        }
        new_col[t] = 1.0 / rho;
        self.fro2_rinv += new_col.iter().map(|x| x * x).sum::<f64>();
        self.r_inv_cols.push(new_col);

        for i in 0..self.m {
            self.h_diag[i] += v[i] * v[i];
        }
        let g = v.dot(&self.resid);
        self.resid -= &v * g;
        self.q_cols.push(v);
        Some(())
    }

    /// Scores the current prefix; `None` when M ≤ P or a leverage hits one.
    pub fn score(&self) -> Option<PrefixScore> {
        let p = self.q_cols.len();
        if self.m <= p {
            return None;
        }
        let mut acc = 0.0;
        for i in 0..self.m {
            let hi = self.h_diag[i];
            if hi >= 1.0 - 1e-10 {
                return None;
            }
            let e = self.resid[i] / (1.0 - hi);
            acc += e * e;
        }
        let err_loo = acc / self.m as f64 / self.sigma2;
        let t = self.m as f64 / (self.m - p) as f64 * (1.0 + self.fro2_rinv);
        Some(PrefixScore { err_loo, err_cloo: err_loo * t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn gaussian_matrix(m: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn unit_vector_recovered() {
        let h = gaussian_matrix(20, 5, 1);
        let y: Vec<f64> = h.column(2).iter().copied().collect();
        let c = ols_fit(&h, &y).unwrap();
        for (j, cj) in c.iter().enumerate() {
            let want = if j == 2 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(*cj, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn square_system_interpolates() {
        let h = gaussian_matrix(6, 6, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let c = ols_fit(&h, &y).unwrap();
        let fitted = &h * DVector::from_column_slice(&c);
        for i in 0..6 {
            assert_abs_diff_eq!(fitted[i], y[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn rank_deficiency_detected() {
        let mut h = gaussian_matrix(10, 3, 4);
        let dup: Vec<f64> = h.column(0).iter().copied().collect();
        h.set_column(2, &DVector::from_column_slice(&dup));
        let y = vec![1.0; 10];
        assert!(matches!(ols_fit(&h, &y), Err(SpceError::RankDeficient(_))));
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let h = gaussian_matrix(40, 7, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 3.0).collect();
        let c = ols_fit(&h, &y).unwrap();
        let resid = DVector::from_column_slice(&y) - &h * DVector::from_column_slice(&c);
        for j in 0..7 {
            assert!(h.column(j).dot(&resid).abs() < 1e-10);
        }
    }

    #[test]
    fn loo_zero_for_exact_response() {
        let h = gaussian_matrix(25, 4, 7);
        let c_true = [1.0, -2.0, 0.5, 3.0];
        let y: Vec<f64> = (0..25)
            .map(|i| (0..4).map(|j| c_true[j] * h[(i, j)]).sum())
            .collect();
        let c = ols_fit(&h, &y).unwrap();
        let (loo, cloo) = corrected_loo(&h, &c, &y).unwrap();
        assert!(loo < 1e-25);
        assert!(cloo >= loo);
    }

    #[test]
    fn constant_response_rejected() {
        let h = gaussian_matrix(10, 2, 8);
        let y = vec![4.2; 10];
        let c = vec![0.0, 0.0];
        assert!(matches!(corrected_loo(&h, &c, &y), Err(SpceError::ZeroVariance)));
    }

    #[test]
    fn loo_matches_literal_refit() {
        // the hat-matrix shortcut must agree with physically leaving each
        // sample out and refitting
        for seed in [11u64, 12, 13] {
            let m = 20;
            let p = 3;
            let h = gaussian_matrix(m, p, seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 100);
            let y: Vec<f64> = (0..m)
                .map(|i| h[(i, 0)] - 0.3 * h[(i, 1)] + 0.05 * rng.random::<f64>())
                .collect();
            let c = ols_fit(&h, &y).unwrap();
            let (loo, _) = corrected_loo(&h, &c, &y).unwrap();

            let mut brute = 0.0;
            for drop in 0..m {
                let hd = h.clone().remove_row(drop);
                let yd: Vec<f64> = (0..m).filter(|&i| i != drop).map(|i| y[i]).collect();
                let cd = ols_fit(&hd, &yd).unwrap();
                let pred: f64 = (0..p).map(|j| cd[j] * h[(drop, j)]).sum();
                brute += (y[drop] - pred).powi(2);
            }
            brute = brute / m as f64 / variance(&y);
            assert!(
                (loo - brute).abs() <= 1e-10 * brute.max(1e-30),
                "seed {seed}: {loo} vs {brute}"
            );
        }
    }

    #[test]
    fn prefix_evaluator_matches_direct_computation() {
        let m = 30;
        let h = gaussian_matrix(m, 6, 21);
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let y: Vec<f64> = (0..m)
            .map(|i| 2.0 + h[(i, 1)] - 0.5 * h[(i, 4)] + 0.01 * rng.random::<f64>())
            .collect();
        let mut ev = PrefixEvaluator::new(&y).unwrap();
        let ones = DVector::from_element(m, 1.0);
        ev.push_column(&ones).unwrap();
        for t in [1usize, 4, 2] {
            let col = DVector::from_column_slice(h.column(t).as_slice());
            ev.push_column(&col).unwrap();
            let score = ev.score().unwrap();

            // direct: columns [1, h_1, ...] in the same order
            let picked: Vec<usize> = match ev.terms() {
                2 => vec![1],
                3 => vec![1, 4],
                4 => vec![1, 4, 2],
                _ => unreachable!(),
            };
            let mut hd = DMatrix::zeros(m, picked.len() + 1);
            hd.set_column(0, &ones);
            for (k, &j) in picked.iter().enumerate() {
                hd.set_column(k + 1, &h.column(j).clone_owned());
            }
            let c = ols_fit(&hd, &y).unwrap();
            let (loo, cloo) = corrected_loo(&hd, &c, &y).unwrap();
            assert_abs_diff_eq!(score.err_loo, loo, epsilon = 1e-10 * loo.max(1e-12));
            assert_abs_diff_eq!(score.err_cloo, cloo, epsilon = 1e-10 * cloo.max(1e-12));
        }
    }

    #[test]
    fn prefix_evaluator_rejects_collinear_column() {
        let m = 15;
        let h = gaussian_matrix(m, 2, 31);
        let y: Vec<f64> = h.column(0).iter().map(|v| v * 2.0).collect();
        let mut ev = PrefixEvaluator::new(&y).unwrap();
        let c0 = DVector::from_column_slice(h.column(0).as_slice());
        ev.push_column(&c0).unwrap();
        assert!(ev.push_column(&(c0 * 3.0)).is_none());
    }
}
