//! Three-phase Newton–Raphson power flow with reactive-limit switching.

use nalgebra::{DMatrix, DVector};

use super::ybus::YBus;
use super::CpfError;
use crate::feeder::{BusKind, FeederModel, VariationVector};

pub const MISMATCH_TOL: f64 = 1e-9;
pub const NEWTON_ITER_CAP: usize = 25;
const MODE_SWITCH_CAP: usize = 10;

/// Effective node mode during a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeMode {
    Slack,
    Pq,
    Pv,
    /// Originally PV, switched to PQ with the generator held at a limit.
    PvLimited { q: f64, upper: bool },
}

/// Converged three-phase state.
#[derive(Debug, Clone)]
pub struct PfSolution {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    /// Reactive generation at originally-PV nodes (p.u.); zero elsewhere.
    pub q_gen: Vec<f64>,
    pub modes: Vec<NodeMode>,
    pub max_mismatch: f64,
    pub newton_iters: usize,
}

/// Per-node aggregated ZIP load coefficients (p.u.):
/// `P(V) = p[0] + p[1]·V + p[2]·V²`.
#[derive(Debug, Clone)]
pub struct LoadTable {
    p: Vec<[f64; 3]>,
    q: Vec<[f64; 3]>,
}

impl LoadTable {
    pub fn build(feeder: &FeederModel) -> LoadTable {
        let n = feeder.node_count();
        let mut p = vec![[0.0; 3]; n];
        let mut q = vec![[0.0; 3]; n];
        let s = feeder.s_phase_kw();
        for l in &feeder.loads {
            let node = feeder.node_id(l.bus, l.phase).expect("validated load phase");
            for k in 0..3 {
                p[node][k] += l.p_kw / s * l.zip[k];
                q[node][k] += l.q_kvar / s * l.zip[k];
            }
        }
        LoadTable { p, q }
    }

    pub(super) fn p_at(&self, node: usize, v: f64) -> f64 {
        let c = self.p[node];
        c[0] + c[1] * v + c[2] * v * v
    }

    pub(super) fn q_at(&self, node: usize, v: f64) -> f64 {
        let c = self.q[node];
        c[0] + c[1] * v + c[2] * v * v
    }

    fn dp_dv(&self, node: usize, v: f64) -> f64 {
        let c = self.p[node];
        c[1] + 2.0 * c[2] * v
    }

    fn dq_dv(&self, node: usize, v: f64) -> f64 {
        let c = self.q[node];
        c[1] + 2.0 * c[2] * v
    }
}

fn initial_modes(feeder: &FeederModel) -> Vec<NodeMode> {
    feeder
        .nodes()
        .iter()
        .map(|&(bus, _)| match feeder.buses[bus].kind {
            BusKind::Slack => NodeMode::Slack,
            BusKind::Pq => NodeMode::Pq,
            BusKind::Pv => NodeMode::Pv,
        })
        .collect()
}

fn flat_start(feeder: &FeederModel) -> (Vec<f64>, Vec<f64>) {
    let nodes = feeder.nodes();
    let theta: Vec<f64> = nodes.iter().map(|&(_, ph)| ph.reference_angle()).collect();
    let v: Vec<f64> = nodes.iter().map(|&(bus, _)| feeder.buses[bus].v0).collect();
    (theta, v)
}

/// Network injection at a node for the present state: (P_calc, Q_calc).
pub(super) fn calc_injection(y: &YBus, theta: &[f64], v: &[f64], n: usize) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    for &(m, ynm) in &y.rows[n] {
        let (g, b) = (ynm.re, ynm.im);
        let t = theta[n] - theta[m];
        let (s, c) = t.sin_cos();
        p += v[m] * (g * c + b * s);
        q += v[m] * (g * s - b * c);
    }
    (v[n] * p, v[n] * q)
}

/// Solves the parameterized power flow at fixed `lambda`.
///
/// PV nodes whose reactive generation leaves its band are switched to PQ at
/// the violated limit and the solve repeats until the mode flags are stable.
pub fn solve_power_flow(
    feeder: &FeederModel,
    y: &YBus,
    loads: &LoadTable,
    b: &VariationVector,
    lambda: f64,
    warm: Option<&PfSolution>,
) -> Result<PfSolution, CpfError> {
    let n = feeder.node_count();
    let (mut theta, mut v, mut modes) = match warm {
        Some(w) => (w.theta.clone(), w.v.clone(), w.modes.clone()),
        None => {
            let (t, vv) = flat_start(feeder);
            (t, vv, initial_modes(feeder))
        }
    };

    for _round in 0..MODE_SWITCH_CAP {
        let (iters, max_mis) =
            newton_inner(feeder, y, loads, b, lambda, &mut theta, &mut v, &modes)?;

        // reactive generation at PV-mode nodes
        let mut q_gen = vec![0.0; n];
        let mut switched = false;
        for node in 0..n {
            match modes[node] {
                NodeMode::Pv => {
                    let (_, qc) = calc_injection(y, &theta, &v, node);
                    let qg = qc + loads.q_at(node, v[node]) - lambda * b.q[node];
                    let bus = &feeder.buses[feeder.nodes()[node].0];
                    if qg > bus.qmax {
                        modes[node] = NodeMode::PvLimited { q: bus.qmax, upper: true };
                        switched = true;
                    } else if qg < bus.qmin {
                        modes[node] = NodeMode::PvLimited { q: bus.qmin, upper: false };
                        switched = true;
                    } else {
                        q_gen[node] = qg;
                    }
                }
                NodeMode::PvLimited { q, .. } => q_gen[node] = q,
                _ => {}
            }
        }
        if !switched {
            return Ok(PfSolution {
                theta,
                v,
                q_gen,
                modes,
                max_mismatch: max_mis,
                newton_iters: iters,
            });
        }
    }
    Err(CpfError::ModeOscillation)
}

/// Specified injection at a node: base ZIP consumption plus the scaled
/// growth direction (plus frozen reactive generation where applicable).
fn spec_p(loads: &LoadTable, b: &VariationVector, lambda: f64, node: usize, v: f64) -> f64 {
    -loads.p_at(node, v) + lambda * b.p[node]
}

fn spec_q(
    loads: &LoadTable,
    b: &VariationVector,
    lambda: f64,
    node: usize,
    v: f64,
    mode: NodeMode,
) -> f64 {
    let q_fixed = match mode {
        NodeMode::PvLimited { q, .. } => q,
        _ => 0.0,
    };
    q_fixed - loads.q_at(node, v) + lambda * b.q[node]
}

#[allow(clippy::too_many_arguments)]
fn newton_inner(
    feeder: &FeederModel,
    y: &YBus,
    loads: &LoadTable,
    b: &VariationVector,
    lambda: f64,
    theta: &mut [f64],
    v: &mut [f64],
    modes: &[NodeMode],
) -> Result<(usize, f64), CpfError> {
    let n = feeder.node_count();
    // unknown layout: angles for all non-slack nodes, then magnitudes for
    // PQ-mode nodes
    let ang_nodes: Vec<usize> = (0..n).filter(|&i| modes[i] != NodeMode::Slack).collect();
    let mag_nodes: Vec<usize> = (0..n)
        .filter(|&i| matches!(modes[i], NodeMode::Pq | NodeMode::PvLimited { .. }))
        .collect();
    let mut ang_pos = vec![usize::MAX; n];
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &i) in ang_nodes.iter().enumerate() {
        ang_pos[i] = k;
    }
    for (k, &i) in mag_nodes.iter().enumerate() {
        mag_pos[i] = ang_nodes.len() + k;
    }
    let dim = ang_nodes.len() + mag_nodes.len();
    if dim == 0 {
        return Ok((0, 0.0));
    }

    let mut best_mis = f64::INFINITY;
    for iter in 0..=NEWTON_ITER_CAP {
        // mismatches
        let mut f = DVector::<f64>::zeros(dim);
        let mut max_mis = 0.0f64;
        let mut calc = vec![(0.0, 0.0); n];
        for node in 0..n {
            if modes[node] == NodeMode::Slack {
                continue;
            }
            calc[node] = calc_injection(y, theta, v, node);
            let dp = spec_p(loads, b, lambda, node, v[node]) - calc[node].0;
            f[ang_pos[node]] = dp;
            max_mis = max_mis.max(dp.abs());
            if mag_pos[node] != usize::MAX {
                let dq = spec_q(loads, b, lambda, node, v[node], modes[node]) - calc[node].1;
                f[mag_pos[node]] = dq;
                max_mis = max_mis.max(dq.abs());
            }
        }
        if max_mis < MISMATCH_TOL {
            return Ok((iter, max_mis));
        }
        if iter == NEWTON_ITER_CAP {
            break;
        }
        best_mis = best_mis.min(max_mis);

        let jac = assemble_jacobian(y, loads, modes, theta, v, &ang_pos, &mag_pos, &calc, dim);

        let lu = jac.lu();
        let dx = lu.solve(&f).ok_or(CpfError::NonConvergence {
            lambda,
            iterations: iter,
            mismatch: max_mis,
        })?;
        // damped update: cap per-iteration movement
        for (k, &node) in ang_nodes.iter().enumerate() {
            theta[node] += dx[k].clamp(-0.5, 0.5);
        }
        for (k, &node) in mag_nodes.iter().enumerate() {
            let step = dx[ang_nodes.len() + k].clamp(-0.2, 0.2);
            v[node] = (v[node] + step).max(0.05);
        }
    }
    Err(CpfError::NonConvergence {
        lambda,
        iterations: NEWTON_ITER_CAP,
        mismatch: best_mis,
    })
}

/// Reduced right-hand side ∂F/∂λ: the growth vector mapped onto the active
/// equations of the present mode set.
pub fn growth_rhs(b: &VariationVector, modes: &[NodeMode]) -> DVector<f64> {
    let n = modes.len();
    let ang: Vec<usize> = (0..n).filter(|&i| modes[i] != NodeMode::Slack).collect();
    let mag: Vec<usize> = (0..n)
        .filter(|&i| matches!(modes[i], NodeMode::Pq | NodeMode::PvLimited { .. }))
        .collect();
    let mut rhs = DVector::zeros(ang.len() + mag.len());
    for (k, &i) in ang.iter().enumerate() {
        rhs[k] = b.p[i];
    }
    for (k, &i) in mag.iter().enumerate() {
        rhs[ang.len() + k] = b.q[i];
    }
    rhs
}

/// Jacobian of (calc − spec) at a converged state, in the same unknown
/// layout as the Newton solve; used for tangent predictors.
pub fn state_jacobian(
    feeder: &FeederModel,
    y: &YBus,
    loads: &LoadTable,
    sol: &PfSolution,
) -> DMatrix<f64> {
    let n = feeder.node_count();
    let modes = &sol.modes;
    let ang_nodes: Vec<usize> = (0..n).filter(|&i| modes[i] != NodeMode::Slack).collect();
    let mag_nodes: Vec<usize> = (0..n)
        .filter(|&i| matches!(modes[i], NodeMode::Pq | NodeMode::PvLimited { .. }))
        .collect();
    let mut ang_pos = vec![usize::MAX; n];
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &i) in ang_nodes.iter().enumerate() {
        ang_pos[i] = k;
    }
    for (k, &i) in mag_nodes.iter().enumerate() {
        mag_pos[i] = ang_nodes.len() + k;
    }
    let dim = ang_nodes.len() + mag_nodes.len();
    let calc: Vec<(f64, f64)> = (0..n)
        .map(|node| calc_injection(y, &sol.theta, &sol.v, node))
        .collect();
    assemble_jacobian(y, loads, modes, &sol.theta, &sol.v, &ang_pos, &mag_pos, &calc, dim)
}

/// Jacobian of (calc − spec) wrt (θ, V) in the given unknown layout.
#[allow(clippy::too_many_arguments)]
fn assemble_jacobian(
    y: &YBus,
    loads: &LoadTable,
    modes: &[NodeMode],
    theta: &[f64],
    v: &[f64],
    ang_pos: &[usize],
    mag_pos: &[usize],
    calc: &[(f64, f64)],
    dim: usize,
) -> DMatrix<f64> {
    let n = modes.len();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for node in 0..n {
        if modes[node] == NodeMode::Slack {
            continue;
        }
        let (pc, qc) = calc[node];
        let row_p = ang_pos[node];
        let row_q = mag_pos[node];
        for &(m, ynm) in &y.rows[node] {
            if m == node {
                continue;
            }
            let (g, bb) = (ynm.re, ynm.im);
            let t = theta[node] - theta[m];
            let (s, c) = t.sin_cos();
            if ang_pos[m] != usize::MAX {
                jac[(row_p, ang_pos[m])] = v[node] * v[m] * (g * s - bb * c);
            }
            if mag_pos[m] != usize::MAX {
                jac[(row_p, mag_pos[m])] = v[node] * (g * c + bb * s);
            }
            if row_q != usize::MAX {
                if ang_pos[m] != usize::MAX {
                    jac[(row_q, ang_pos[m])] = -v[node] * v[m] * (g * c + bb * s);
                }
                if mag_pos[m] != usize::MAX {
                    jac[(row_q, mag_pos[m])] = v[node] * (g * s - bb * c);
                }
            }
        }
        let ynn = y.get(node, node);
        jac[(row_p, ang_pos[node])] = -qc - ynn.im * v[node] * v[node];
        if mag_pos[node] != usize::MAX {
            jac[(row_p, mag_pos[node])] =
                pc / v[node] + ynn.re * v[node] + loads.dp_dv(node, v[node]);
        }
        if row_q != usize::MAX {
            jac[(row_q, ang_pos[node])] = pc - ynn.re * v[node] * v[node];
            jac[(row_q, mag_pos[node])] =
                qc / v[node] - ynn.im * v[node] + loads.dq_dv(node, v[node]);
        }
    }
    jac
}

/// Applies a Δ(θ, V) step in the solver's unknown layout.
pub fn apply_state_step(sol: &mut PfSolution, dx: &DVector<f64>, scale: f64) {
    let n = sol.modes.len();
    let ang_nodes: Vec<usize> = (0..n).filter(|&i| sol.modes[i] != NodeMode::Slack).collect();
    let mag_nodes: Vec<usize> = (0..n)
        .filter(|&i| matches!(sol.modes[i], NodeMode::Pq | NodeMode::PvLimited { .. }))
        .collect();
    for (k, &node) in ang_nodes.iter().enumerate() {
        sol.theta[node] += scale * dx[k];
    }
    for (k, &node) in mag_nodes.iter().enumerate() {
        sol.v[node] = (sol.v[node] + scale * dx[ang_nodes.len() + k]).max(0.05);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpf::assemble_ybus;
    use crate::feeder::{build_variation_vector, parse_feeder};
    use approx::assert_abs_diff_eq;

    fn solve_doc(doc: &str, lambda: f64) -> (crate::feeder::FeederModel, PfSolution) {
        let f = parse_feeder(doc).unwrap();
        let y = assemble_ybus(&f).unwrap();
        let loads = LoadTable::build(&f);
        let u: Vec<f64> = f
            .input_marginals(None, None)
            .unwrap()
            .iter()
            .map(|m| m.mean())
            .collect();
        let b = build_variation_vector(&f, &u).unwrap();
        let sol = solve_power_flow(&f, &y, &loads, &b, lambda, None).unwrap();
        (f, sol)
    }

    #[test]
    fn two_bus_closed_form_voltage() {
        // E = 1, X = 0.1 p.u., P = 1 p.u. at unity pf:
        // V² = (1 + √(1 − 4X²P²))/2
        let zb = 4.16 * 4.16;
        let x_ohm = 0.1 * zb;
        let p_kw = 1000.0 / 3.0; // 1 p.u. on the phase base
        let doc = format!(
            r#"{{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {{"id": "src", "phases": "a", "kind": "slack"}},
                {{"id": "ld", "phases": "a", "kind": "pq", "vmin": 0.5}}
            ],
            "branches": [{{"from": "src", "to": "ld", "z": [[{{"r": 0.0, "x": {x_ohm}}}]], "ampacity": 1000}}],
            "loads": [{{"bus": "ld", "phase": "a", "p_kw": {p_kw}, "q_kvar": 0.0,
                        "growth": {{"family": "normal", "stdev_frac": 0.0}}}}],
            "res": []
        }}"#
        );
        let (_, sol) = solve_doc(&doc, 0.0);
        let v_expect = ((1.0 + (1.0f64 - 4.0 * 0.01).sqrt()) / 2.0).sqrt();
        assert_abs_diff_eq!(sol.v[1], v_expect, epsilon = 1e-9);
        assert!(sol.max_mismatch < 1e-8);
    }

    #[test]
    fn balanced_three_phase_symmetry() {
        // symmetric impedances and loads: per-phase magnitudes identical
        let doc = r#"{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {"id": "s", "phases": "abc", "kind": "slack"},
                {"id": "m", "phases": "abc", "kind": "pq"}
            ],
            "branches": [{"from": "s", "to": "m",
                "z": [[{"r": 0.4, "x": 1.0}, {"r": 0.1, "x": 0.4}, {"r": 0.1, "x": 0.4}],
                       [{"r": 0.1, "x": 0.4}, {"r": 0.4, "x": 1.0}, {"r": 0.1, "x": 0.4}],
                       [{"r": 0.1, "x": 0.4}, {"r": 0.1, "x": 0.4}, {"r": 0.4, "x": 1.0}]],
                "ampacity": 500}],
            "loads": [
                {"bus": "m", "phase": "a", "p_kw": 150.0, "q_kvar": 70.0, "growth": {"family": "normal", "stdev_frac": 0.05}},
                {"bus": "m", "phase": "b", "p_kw": 150.0, "q_kvar": 70.0, "growth": {"family": "normal", "stdev_frac": 0.05}},
                {"bus": "m", "phase": "c", "p_kw": 150.0, "q_kvar": 70.0, "growth": {"family": "normal", "stdev_frac": 0.05}}
            ],
            "res": []
        }"#;
        let (f, sol) = solve_doc(doc, 0.0);
        let va = sol.v[f.node_id(1, crate::feeder::Phase::A).unwrap()];
        let vb = sol.v[f.node_id(1, crate::feeder::Phase::B).unwrap()];
        let vc = sol.v[f.node_id(1, crate::feeder::Phase::C).unwrap()];
        assert_abs_diff_eq!(va, vb, epsilon = 1e-10);
        assert_abs_diff_eq!(va, vc, epsilon = 1e-10);
    }

    #[test]
    fn lambda_zero_is_base_case_and_growth_moves_it() {
        let doc = crate::feeder::tests::feeder13_doc();
        let f = parse_feeder(&doc).unwrap();
        let y = assemble_ybus(&f).unwrap();
        let loads = LoadTable::build(&f);
        let u: Vec<f64> = f
            .input_marginals(None, None)
            .unwrap()
            .iter()
            .map(|m| m.mean())
            .collect();
        let b = build_variation_vector(&f, &u).unwrap();
        let s0 = solve_power_flow(&f, &y, &loads, &b, 0.0, None).unwrap();
        assert!(s0.max_mismatch < 1e-8);
        assert!(s0.v.iter().all(|&v| v > 0.9 && v < 1.05), "base voltages {:?}", s0.v);
        let s1 = solve_power_flow(&f, &y, &loads, &b, 0.3, Some(&s0)).unwrap();
        let min0 = s0.v.iter().cloned().fold(f64::INFINITY, f64::min);
        let min1 = s1.v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min1 < min0, "load growth must depress the weakest voltage");
    }

    #[test]
    fn pv_bus_holds_voltage_until_q_limit() {
        let mk = |qmax: f64| {
            format!(
                r#"{{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {{"id": "s", "phases": "a", "kind": "slack"}},
                {{"id": "m", "phases": "a", "kind": "pq"}},
                {{"id": "g", "phases": "a", "kind": "pv", "v0": 1.0,
                  "qmin_kvar": -1000.0, "qmax_kvar": {qmax}}}
            ],
            "branches": [
                {{"from": "s", "to": "m", "z": [[{{"r": 1.0, "x": 3.0}}]], "ampacity": 500}},
                {{"from": "m", "to": "g", "z": [[{{"r": 0.5, "x": 1.5}}]], "ampacity": 500}}
            ],
            "loads": [{{"bus": "m", "phase": "a", "p_kw": 200.0, "q_kvar": 120.0,
                        "growth": {{"family": "normal", "stdev_frac": 0.05}}}}],
            "res": []
        }}"#
            )
        };
        // generous limit: PV bus holds its setpoint
        let (f, sol) = solve_doc(&mk(1000.0), 0.0);
        let g = f.node_id(2, crate::feeder::Phase::A).unwrap();
        assert_abs_diff_eq!(sol.v[g], 1.0, epsilon = 1e-9);
        assert!(matches!(sol.modes[g], NodeMode::Pv));
        assert!(sol.q_gen[g] > 0.0);

        // tight limit: switches to PQ at the bound and the voltage sags
        let (f2, sol2) = solve_doc(&mk(20.0), 0.0);
        let g2 = f2.node_id(2, crate::feeder::Phase::A).unwrap();
        match sol2.modes[g2] {
            NodeMode::PvLimited { q, upper } => {
                assert!(upper);
                assert_abs_diff_eq!(q, 20.0 / f2.s_phase_kw(), epsilon = 1e-12);
            }
            other => panic!("expected limit switch, got {other:?}"),
        }
        assert!(sol2.v[g2] < 1.0 - 1e-4);
        assert!(sol2.max_mismatch < 1e-8);
    }

    #[test]
    fn infeasible_lambda_reports_nonconvergence() {
        let zb = 4.16 * 4.16;
        let x_ohm = 0.1 * zb;
        let doc = format!(
            r#"{{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {{"id": "src", "phases": "a", "kind": "slack"}},
                {{"id": "ld", "phases": "a", "kind": "pq", "dpg_kw": {}}}
            ],
            "branches": [{{"from": "src", "to": "ld", "z": [[{{"r": 0.0, "x": {x_ohm}}}]], "ampacity": 1000}}],
            "loads": [], "res": []
        }}"#,
            -1000.0 / 3.0
        );
        let f = parse_feeder(&doc).unwrap();
        let y = assemble_ybus(&f).unwrap();
        let loads = LoadTable::build(&f);
        let b = build_variation_vector(&f, &[]).unwrap();
        // nose at λ = 5: beyond it the corrector must fail
        assert!(solve_power_flow(&f, &y, &loads, &b, 6.0, None).is_err());
        assert!(solve_power_flow(&f, &y, &loads, &b, 4.0, None).is_ok());
    }
}
