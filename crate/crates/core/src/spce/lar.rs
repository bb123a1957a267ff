//! Least angle regression predictor ordering.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Classic LAR entry order of the columns of `h` against `y`.
///
/// Columns are standardized (zero mean, unit norm) and `y` centered before
/// the path is computed, so the constant column — and any other column with
/// no variation across the design — never enters. The path stops at
/// `min(M − 1, P)` entrants, when the running correlation is exhausted, or
/// when the active Gram matrix stops being positive definite.
pub fn lar_path(h: &DMatrix<f64>, y: &[f64]) -> Vec<usize> {
    let m = h.nrows();
    let p = h.ncols();
    assert_eq!(m, y.len(), "row count must match response length");
    if m < 2 || p == 0 {
        return Vec::new();
    }

    // standardize usable columns
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut col_ids: Vec<usize> = Vec::new();
    for j in 0..p {
        let col = h.column(j);
        let mean = col.sum() / m as f64;
        let centered = DVector::from_iterator(m, col.iter().map(|v| v - mean));
        let norm = centered.norm();
        if norm > 1e-12 {
            cols.push(centered / norm);
            col_ids.push(j);
        }
    }
    if cols.is_empty() {
        return Vec::new();
    }

    let y_mean = y.iter().sum::<f64>() / m as f64;
    let mut resid = DVector::from_iterator(m, y.iter().map(|v| v - y_mean));
    let y_scale = resid.norm();
    if y_scale <= 1e-14 {
        return Vec::new();
    }
    let c_tol = 1e-12 * y_scale;

    let usable = cols.len();
    let max_steps = usable.min(m - 1);
    let mut active: Vec<usize> = Vec::new(); // indices into `cols`
    let mut in_active = vec![false; usable];
    let mut order = Vec::new();

    // first entrant: largest absolute correlation
    let corr_with = |r: &DVector<f64>, j: usize| cols[j].dot(r);
    {
        let (mut best, mut best_c) = (usize::MAX, 0.0f64);
        for j in 0..usable {
            let c = corr_with(&resid, j).abs();
            if c > best_c {
                best_c = c;
                best = j;
            }
        }
        if best == usize::MAX || best_c <= c_tol {
            return Vec::new();
        }
        active.push(best);
        in_active[best] = true;
        order.push(col_ids[best]);
    }

    while order.len() < max_steps {
        let c: Vec<f64> = (0..usable).map(|j| corr_with(&resid, j)).collect();
        let big_c = active.iter().map(|&j| c[j].abs()).fold(0.0f64, f64::max);
        if big_c <= c_tol {
            break;
        }
        // equiangular direction of the signed active columns
        let k = active.len();
        let mut gram = DMatrix::zeros(k, k);
        for (ai, &a) in active.iter().enumerate() {
            for (bi, &b) in active.iter().enumerate() {
                gram[(ai, bi)] = c[a].signum() * c[b].signum() * cols[a].dot(&cols[b]);
            }
        }
        let chol = match Cholesky::new(gram) {
            Some(c) => c,
            None => break, // collinear active set: path cannot continue
        };
        let w = chol.solve(&DVector::from_element(k, 1.0));
        let denom = w.sum();
        if !(denom > 0.0) {
            break;
        }
        let a_a = denom.sqrt().recip();
        let mut u = DVector::zeros(m);
        for (ai, &a) in active.iter().enumerate() {
            u += &cols[a] * (c[a].signum() * w[ai] * a_a);
        }

        if active.len() == usable {
            // every column active: jump to the joint least-squares point
            resid -= &u * (big_c / a_a);
            break;
        }

        // step length to the next tie
        let mut gamma = big_c / a_a;
        let mut entrant = None;
        for j in 0..usable {
            if in_active[j] {
                continue;
            }
            let aj = cols[j].dot(&u);
            for cand in [(big_c - c[j]) / (a_a - aj), (big_c + c[j]) / (a_a + aj)] {
                if cand > 1e-14 && cand < gamma {
                    gamma = cand;
                    entrant = Some(j);
                }
            }
        }
        resid -= &u * gamma;
        match entrant {
            Some(j) => {
                active.push(j);
                in_active[j] = true;
                order.push(col_ids[j]);
            }
            None => break, // no tie reachable: full step taken above
        }
    }
    order
}
