//! Degree-adaptive sparse expansion fitting.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::regression::{corrected_loo, effectively_zero, ols_fit, PrefixEvaluator};
use super::{assemble_design_matrix, build_index_set, lar_path, EdSet, MultiIndex, PceModel, SpceError};
use crate::orthopoly::PolyBasis1D;

/// Knobs of the adaptive sparse fit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SpceConfig {
    /// First candidate degree.
    pub p0: usize,
    /// Degree cap.
    pub pmax: usize,
    /// Hyperbolic truncation exponent in (0, 1].
    pub q: f64,
    /// Maximum number of interacting dimensions per term.
    pub max_interaction: usize,
    /// Target corrected leave-one-out error.
    pub eps_target: f64,
}

impl Default for SpceConfig {
    fn default() -> Self {
        SpceConfig { p0: 1, pmax: 8, q: 0.75, max_interaction: 2, eps_target: 1e-6 }
    }
}

/// Fits the best sparse expansion over candidate degrees `p0..=pmax`.
///
/// Per degree: generate the truncated candidate set (design-matrix columns
/// of lower degrees are reused), order the columns by LAR, score every path
/// prefix by the corrected leave-one-out error of its OLS refit, and keep
/// the best prefix. Stops early once the target error is reached or after
/// two consecutive degrees without improvement; the best model seen anywhere
/// is returned either way.
pub fn adaptive_fit(
    ed: &EdSet,
    bases: &[PolyBasis1D],
    cfg: &SpceConfig,
) -> Result<PceModel, SpceError> {
    if ed.is_empty() {
        return Err(SpceError::DimensionMismatch("empty experimental design".into()));
    }
    let n = bases.len();
    if ed.dim() != n {
        return Err(SpceError::DimensionMismatch(format!(
            "{} sample columns vs {} bases",
            ed.dim(),
            n
        )));
    }
    assert!(cfg.p0 <= cfg.pmax, "p0 must not exceed pmax");
    let m = ed.len();
    let y = &ed.y;

    // a flat response is represented exactly by the constant term
    let sigma2 = ed.sigma_y2();
    if !(sigma2 > 0.0) || effectively_zero(sigma2, y) {
        let mean = y.iter().sum::<f64>() / m as f64;
        return Ok(PceModel {
            dim: n,
            bases: bases.to_vec(),
            active_set: vec![MultiIndex::zero(n)],
            coeffs: vec![mean],
            degree: 0,
            q_norm: cfg.q,
            err_loo: 0.0,
            err_cloo: 0.0,
            ed_size: m,
            converged: true,
        });
    }

    let mut column_cache: HashMap<MultiIndex, DVector<f64>> = HashMap::new();
    let mut best: Option<(f64, f64, usize, Vec<MultiIndex>)> = None; // (cloo, loo, degree, active)
    let mut degree_errs: Vec<f64> = Vec::new();

    for degree in cfg.p0..=cfg.pmax {
        let candidates = build_index_set(n, degree, cfg.q, cfg.max_interaction);
        // fill the cache with any new columns, then view them in candidate order
        for a in &candidates {
            if !column_cache.contains_key(a) {
                let h = assemble_design_matrix(bases, std::slice::from_ref(a), &ed.xi)?;
                column_cache.insert(a.clone(), h.column(0).clone_owned());
            }
        }
        let mut h = DMatrix::zeros(m, candidates.len());
        for (k, a) in candidates.iter().enumerate() {
            h.set_column(k, &column_cache[a]);
        }

        let path = lar_path(&h, y);
        let mut evaluator = PrefixEvaluator::new(y)?;
        let zero = MultiIndex::zero(n);
        evaluator
            .push_column(&DVector::from_element(m, 1.0))
            .expect("constant column never degenerate");
        let mut degree_best: Option<(f64, f64, usize)> = None; // (cloo, loo, prefix len)
        if let Some(score) = evaluator.score() {
            degree_best = Some((score.err_cloo, score.err_loo, 0));
        }
        for (t, &col_id) in path.iter().enumerate() {
            if candidates[col_id].is_zero() {
                continue;
            }
            if evaluator.push_column(&column_cache[&candidates[col_id]]).is_none() {
                break;
            }
            if let Some(score) = evaluator.score() {
                let better = degree_best.map_or(true, |(c, _, _)| score.err_cloo < c);
                if better {
                    degree_best = Some((score.err_cloo, score.err_loo, t + 1));
                }
            } else if evaluator.terms() >= m {
                break;
            }
        }

        if let Some((cloo, loo, keep)) = degree_best {
            let mut active = vec![zero.clone()];
            active.extend(path[..keep].iter().map(|&j| candidates[j].clone()));
            let better = best.as_ref().map_or(true, |(c, ..)| cloo < *c);
            if better {
                best = Some((cloo, loo, degree, active));
            }
            degree_errs.push(cloo);
        } else {
            degree_errs.push(f64::INFINITY);
        }

        let reached_target = best.as_ref().is_some_and(|(c, ..)| *c < cfg.eps_target);
        let stalled = degree_errs.len() >= 3 && {
            let k = degree_errs.len();
            degree_errs[k - 1] >= degree_errs[k - 2] && degree_errs[k - 2] >= degree_errs[k - 3]
        };
        if reached_target || stalled {
            break;
        }
    }

    let (_, _, degree, active) = best.ok_or(SpceError::NoUsableModel)?;
    // hybrid step: OLS refit of the retained basis
    let h_active = assemble_design_matrix(bases, &active, &ed.xi)?;
    let coeffs = ols_fit(&h_active, y)?;
    let (err_loo, err_cloo) = corrected_loo(&h_active, &coeffs, y)?;
    Ok(PceModel {
        dim: n,
        bases: bases.to_vec(),
        active_set: active,
        coeffs,
        degree,
        q_norm: cfg.q,
        err_loo,
        err_cloo,
        ed_size: m,
        converged: err_cloo < cfg.eps_target,
    })
}
