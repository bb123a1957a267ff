//! Predictor-corrector continuation along the growth direction.

use nalgebra::{DMatrix, DVector};

use super::newton::{
    apply_state_step, growth_rhs, solve_power_flow, state_jacobian, LoadTable, NodeMode,
    PfSolution, MISMATCH_TOL,
};
use super::ybus::YBus;
use super::{branch_current_amps, CpfError};
use crate::feeder::{FeederModel, VariationVector};

/// Tracing knobs; the defaults implement the documented stepping policy.
#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Cap on a natural-parameterization λ step (keeps the limit-crossing
    /// interpolation error small).
    pub max_lambda_step: f64,
    /// Bracketing tolerance on the nose in λ units.
    pub nose_tol: f64,
    /// Switch to arc-length stepping when |dλ/ds| falls below this.
    pub arc_switch_threshold: f64,
    pub max_steps: usize,
    pub lambda_cap: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            max_lambda_step: 0.05,
            nose_tol: 1e-4,
            arc_switch_threshold: 0.2,
            max_steps: 100_000,
            lambda_cap: 1e4,
        }
    }
}

/// One accepted point of the trace.
#[derive(Debug, Clone)]
pub struct TracePoint {
    pub lambda: f64,
    pub solution: PfSolution,
}

/// Limit events discovered while tracing, with λ interpolated linearly
/// between the bracketing points.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    VoltageLow { lambda: f64, node: usize },
    VoltageHigh { lambda: f64, node: usize },
    Thermal { lambda: f64, branch: usize, phase: usize },
    QLimit { lambda: f64, node: usize },
}

impl TraceEvent {
    pub fn lambda(&self) -> f64 {
        match *self {
            TraceEvent::VoltageLow { lambda, .. }
            | TraceEvent::VoltageHigh { lambda, .. }
            | TraceEvent::Thermal { lambda, .. }
            | TraceEvent::QLimit { lambda, .. } => lambda,
        }
    }
}

/// Upper-branch solution path from λ = 0 to the nose.
#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub points: Vec<TracePoint>,
    pub nose_lambda: f64,
    pub events: Vec<TraceEvent>,
}

/// Traces the continuation curve: natural parameterization with tangent
/// predictors while the curve is shallow, arc-length correction near the
/// nose, adaptive step halving on corrector failures, and a final bisection
/// that brackets the nose to `nose_tol`.
pub fn trace_continuation(
    feeder: &FeederModel,
    y: &YBus,
    b: &VariationVector,
    opts: &ContinuationOptions,
) -> Result<ContinuationTrace, CpfError> {
    if b.is_zero() {
        return Err(CpfError::DegenerateDirection);
    }
    let loads = LoadTable::build(feeder);
    let base = solve_power_flow(feeder, y, &loads, b, 0.0, None)
        .map_err(|e| CpfError::BaseCaseInfeasible(Box::new(e)))?;

    let mut points = vec![TracePoint { lambda: 0.0, solution: base }];
    let mut h = opts.max_lambda_step;
    let mut arc_h = opts.max_lambda_step;
    let mut fail_ceiling = f64::INFINITY; // smallest λ where a corrector failed
    let mut arc_mode = false;

    for _step in 0..opts.max_steps {
        let cur = points.last().expect("trace never empty");
        if cur.lambda > opts.lambda_cap {
            return Err(CpfError::RunawayLambda(cur.lambda));
        }

        // tangent dx/dλ at the current point
        let jac = state_jacobian(feeder, y, &loads, &cur.solution);
        let rhs = growth_rhs(b, &cur.solution.modes);
        let tangent = match jac.clone().lu().solve(&rhs) {
            Some(t) => t,
            None => break, // singular at the nose
        };
        let dlam_ds = 1.0 / (1.0 + tangent.norm_squared()).sqrt();
        if !arc_mode && dlam_ds < opts.arc_switch_threshold {
            arc_mode = true;
        }

        if !arc_mode {
            let step = h.min(fail_ceiling - cur.lambda).min(opts.max_lambda_step);
            if step < opts.nose_tol {
                break;
            }
            let lam_next = cur.lambda + step;
            let mut predicted = cur.solution.clone();
            apply_state_step(&mut predicted, &tangent, step);
            match solve_power_flow(feeder, y, &loads, b, lam_next, Some(&predicted)) {
                Ok(sol) => {
                    points.push(TracePoint { lambda: lam_next, solution: sol });
                    h = (h * 2.0).min(opts.max_lambda_step);
                }
                Err(_) => {
                    fail_ceiling = fail_ceiling.min(lam_next);
                    h /= 2.0;
                    if h < opts.nose_tol / 4.0 {
                        break;
                    }
                }
            }
        } else {
            // arc-length predictor along the unit tangent (λ increasing)
            let norm = (1.0 + tangent.norm_squared()).sqrt();
            let tau_x = &tangent / norm;
            let tau_l = 1.0 / norm;
            let step = arc_h.min((fail_ceiling - cur.lambda).max(opts.nose_tol) / tau_l.max(1e-12));
            let mut predicted = cur.solution.clone();
            apply_state_step(&mut predicted, &tau_x, step);
            let lam_pred = cur.lambda + tau_l * step;
            match arc_corrector(
                feeder, y, &loads, b, predicted, lam_pred, &tau_x, tau_l, cur.lambda,
            ) {
                Ok((sol, lam)) if lam > cur.lambda + 1e-14 => {
                    points.push(TracePoint { lambda: lam, solution: sol });
                    arc_h = (arc_h * 1.5).min(opts.max_lambda_step);
                }
                Ok(_) => {
                    // λ stalled or decreased: the nose sits within this step
                    fail_ceiling =
                        fail_ceiling.min(cur.lambda + tau_l.abs() * step + opts.nose_tol);
                    break;
                }
                Err(_) => {
                    arc_h /= 2.0;
                    if arc_h < 1e-7 {
                        break;
                    }
                }
            }
        }
    }

    // bisection refinement of the nose bracket with the natural corrector
    let mut lam_lo = points.last().expect("nonempty").lambda;
    let mut lam_hi = if fail_ceiling.is_finite() {
        fail_ceiling.max(lam_lo + opts.nose_tol)
    } else {
        lam_lo + opts.max_lambda_step
    };
    while lam_hi - lam_lo > opts.nose_tol {
        let mid = 0.5 * (lam_lo + lam_hi);
        let warm = points.last().expect("nonempty").solution.clone();
        match solve_power_flow(feeder, y, &loads, b, mid, Some(&warm)) {
            Ok(sol) => {
                points.push(TracePoint { lambda: mid, solution: sol });
                lam_lo = mid;
            }
            Err(_) => lam_hi = mid,
        }
    }

    let nose_lambda = lam_lo;
    let events = scan_events(feeder, y, &points);
    Ok(ContinuationTrace { points, nose_lambda, events })
}

/// Pseudo-arclength corrector: Newton on the power-flow residuals augmented
/// with the hyperplane normal to the predictor tangent.
#[allow(clippy::too_many_arguments)]
fn arc_corrector(
    feeder: &FeederModel,
    y: &YBus,
    loads: &LoadTable,
    b: &VariationVector,
    mut sol: PfSolution,
    mut lambda: f64,
    tau_x: &DVector<f64>,
    tau_l: f64,
    lambda_anchor: f64,
) -> Result<(PfSolution, f64), CpfError> {
    let dim = tau_x.len();
    let lam_pred = lambda;
    let x_pred: DVector<f64> = state_vector(&sol);
    for _ in 0..25 {
        let f = residuals(feeder, y, loads, b, lambda, &sol);
        let g2 = tau_x.dot(&(state_vector(&sol) - &x_pred)) + tau_l * (lambda - lam_pred);
        let max_mis = f.amax().max(g2.abs());
        if max_mis < MISMATCH_TOL {
            sol.max_mismatch = f.amax();
            // keep reactive generation and modes consistent
            let refreshed = solve_power_flow(feeder, y, loads, b, lambda, Some(&sol))?;
            return Ok((refreshed, lambda));
        }
        let jac = state_jacobian(feeder, y, loads, &sol);
        let rhs_l = growth_rhs(b, &sol.modes);
        // augmented system: [J  −b; τ_xᵀ  τ_λ]·[Δx; Δλ] = [f; −g2]
        let mut a = DMatrix::<f64>::zeros(dim + 1, dim + 1);
        a.view_mut((0, 0), (dim, dim)).copy_from(&jac);
        for i in 0..dim {
            a[(i, dim)] = -rhs_l[i];
            a[(dim, i)] = tau_x[i];
        }
        a[(dim, dim)] = tau_l;
        let mut rhs = DVector::zeros(dim + 1);
        rhs.rows_mut(0, dim).copy_from(&f);
        rhs[dim] = -g2;
        let dx = a.lu().solve(&rhs).ok_or(CpfError::NonConvergence {
            lambda,
            iterations: 0,
            mismatch: max_mis,
        })?;
        apply_state_step(&mut sol, &dx.rows(0, dim).clone_owned(), 1.0);
        lambda += dx[dim];
        if lambda < lambda_anchor - 10.0 * (lam_pred - lambda_anchor).abs() - 1.0 {
            break; // corrector running away down the lower branch
        }
    }
    Err(CpfError::NonConvergence { lambda, iterations: 25, mismatch: f64::NAN })
}

fn state_vector(sol: &PfSolution) -> DVector<f64> {
    let n = sol.modes.len();
    let mut out = Vec::new();
    for i in 0..n {
        if sol.modes[i] != NodeMode::Slack {
            out.push(sol.theta[i]);
        }
    }
    for i in 0..n {
        if matches!(sol.modes[i], NodeMode::Pq | NodeMode::PvLimited { .. }) {
            out.push(sol.v[i]);
        }
    }
    DVector::from_vec(out)
}

/// Power-flow residuals (spec − calc) in the solver's equation layout.
fn residuals(
    feeder: &FeederModel,
    y: &YBus,
    loads: &LoadTable,
    b: &VariationVector,
    lambda: f64,
    sol: &PfSolution,
) -> DVector<f64> {
    let n = feeder.node_count();
    let mut rows = Vec::new();
    for node in 0..n {
        if sol.modes[node] == NodeMode::Slack {
            continue;
        }
        let (pc, _) = super::newton::calc_injection(y, &sol.theta, &sol.v, node);
        rows.push(-loads.p_at(node, sol.v[node]) + lambda * b.p[node] - pc);
    }
    for node in 0..n {
        if !matches!(sol.modes[node], NodeMode::Pq | NodeMode::PvLimited { .. }) {
            continue;
        }
        let (_, qc) = super::newton::calc_injection(y, &sol.theta, &sol.v, node);
        let q_fixed = match sol.modes[node] {
            NodeMode::PvLimited { q, .. } => q,
            _ => 0.0,
        };
        rows.push(q_fixed - loads.q_at(node, sol.v[node]) + lambda * b.q[node] - qc);
    }
    DVector::from_vec(rows)
}

/// Scans consecutive trace points for limit crossings and mode switches.
fn scan_events(feeder: &FeederModel, y: &YBus, points: &[TracePoint]) -> Vec<TraceEvent> {
    let mut events = Vec::new();
    let n = feeder.node_count();

    let volt_margins = |tp: &TracePoint| -> Vec<(f64, f64)> {
        (0..n)
            .map(|node| {
                let bus = &feeder.buses[feeder.nodes()[node].0];
                (tp.solution.v[node] - bus.vmin, bus.vmax - tp.solution.v[node])
            })
            .collect()
    };
    let thermal_margins = |tp: &TracePoint| -> Vec<Vec<f64>> {
        feeder
            .branches
            .iter()
            .enumerate()
            .map(|(bi, br)| {
                branch_current_amps(feeder, y, bi, &tp.solution)
                    .into_iter()
                    .map(|i| br.ampacity - i)
                    .collect()
            })
            .collect()
    };

    let mut prev_v = volt_margins(&points[0]);
    let mut prev_t = thermal_margins(&points[0]);
    let mut seen_low = vec![false; n];
    let mut seen_high = vec![false; n];
    let mut seen_th: Vec<Vec<bool>> =
        feeder.branches.iter().map(|br| vec![false; br.phases.len()]).collect();

    // base-case violations count as events at λ = 0
    for node in 0..n {
        if prev_v[node].0 <= 0.0 && !seen_low[node] {
            seen_low[node] = true;
            events.push(TraceEvent::VoltageLow { lambda: 0.0, node });
        }
        if prev_v[node].1 <= 0.0 && !seen_high[node] {
            seen_high[node] = true;
            events.push(TraceEvent::VoltageHigh { lambda: 0.0, node });
        }
    }
    for (bi, ms) in prev_t.iter().enumerate() {
        for (pi, &m) in ms.iter().enumerate() {
            if m <= 0.0 && !seen_th[bi][pi] {
                seen_th[bi][pi] = true;
                events.push(TraceEvent::Thermal { lambda: 0.0, branch: bi, phase: pi });
            }
        }
    }

    for w in points.windows(2) {
        let (a, c) = (&w[0], &w[1]);
        let cur_v = volt_margins(c);
        let cur_t = thermal_margins(c);
        let interp = |m0: f64, m1: f64| -> f64 {
            if (m1 - m0).abs() < 1e-30 {
                c.lambda
            } else {
                a.lambda + (c.lambda - a.lambda) * (m0 / (m0 - m1))
            }
        };
        for node in 0..n {
            if !seen_low[node] && prev_v[node].0 > 0.0 && cur_v[node].0 <= 0.0 {
                seen_low[node] = true;
                events.push(TraceEvent::VoltageLow {
                    lambda: interp(prev_v[node].0, cur_v[node].0),
                    node,
                });
            }
            if !seen_high[node] && prev_v[node].1 > 0.0 && cur_v[node].1 <= 0.0 {
                seen_high[node] = true;
                events.push(TraceEvent::VoltageHigh {
                    lambda: interp(prev_v[node].1, cur_v[node].1),
                    node,
                });
            }
            if c.solution.modes[node] != a.solution.modes[node] {
                events.push(TraceEvent::QLimit { lambda: c.lambda, node });
            }
        }
        for (bi, ms) in cur_t.iter().enumerate() {
            for (pi, &m) in ms.iter().enumerate() {
                if !seen_th[bi][pi] && prev_t[bi][pi] > 0.0 && m <= 0.0 {
                    seen_th[bi][pi] = true;
                    events.push(TraceEvent::Thermal {
                        lambda: interp(prev_t[bi][pi], m),
                        branch: bi,
                        phase: pi,
                    });
                }
            }
        }
        prev_v = cur_v;
        prev_t = cur_t;
    }
    events.sort_by(|x, y| x.lambda().partial_cmp(&y.lambda()).expect("finite lambdas"));
    events
}
