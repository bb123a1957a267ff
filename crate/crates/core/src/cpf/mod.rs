//! Deterministic three-phase power flow and continuation tracing.
//!
//! For one realization of the random inputs the continuation curve is traced
//! from the base case past every operating limit up to the saddle-node
//! (nose) point, and the three delivery margins are read off the trace:
//! the first voltage-band violation, the first branch thermal violation,
//! and voltage collapse itself. Margins are reported in megawatts of total
//! growth: λ is scaled by the 1-norm of the active-power part of the growth
//! direction.

mod continuation;
mod newton;
mod ybus;

pub use continuation::{
    trace_continuation, ContinuationOptions, ContinuationTrace, TraceEvent, TracePoint,
};
pub use newton::{solve_power_flow, LoadTable, NodeMode, PfSolution};
pub use ybus::{assemble_ybus, YBus};

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::feeder::{FeederModel, VariationVector};

#[derive(Debug, Error)]
pub enum CpfError {
    #[error("branch {from:?}→{to:?} has a singular impedance block")]
    SingularBranch { from: String, to: String },
    #[error("power flow did not converge at λ = {lambda} ({iterations} iterations, mismatch {mismatch:.3e})")]
    NonConvergence { lambda: f64, iterations: usize, mismatch: f64 },
    #[error("PV/PQ mode switching oscillated")]
    ModeOscillation,
    #[error("base case (λ = 0) infeasible: {0}")]
    BaseCaseInfeasible(Box<CpfError>),
    #[error("growth direction is zero; continuation has no direction to trace")]
    DegenerateDirection,
    #[error("λ exceeded the runaway cap ({0}); check the growth direction scale")]
    RunawayLambda(f64),
}

/// Which operating limit binds a margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BindingLimit {
    LowerVoltage { element: String },
    UpperVoltage { element: String },
    Thermal { element: String },
    Collapse,
}

/// The three delivery margins of one deterministic continuation, in MW.
#[derive(Debug, Clone, Serialize)]
pub struct AdcTriple {
    /// Margin to the first voltage-band violation.
    pub lambda_vv: f64,
    /// Margin to the first branch ampacity violation.
    pub lambda_tv: f64,
    /// Margin to voltage collapse (the nose).
    pub lambda_vc: f64,
    /// min(vv, tv, vc).
    pub overall: f64,
    pub binding_vv: BindingLimit,
    pub binding_tv: BindingLimit,
    pub binding_vc: BindingLimit,
}

impl AdcTriple {
    pub fn response(&self, r: Response) -> f64 {
        match r {
            Response::VoltageViolation => self.lambda_vv,
            Response::ThermalViolation => self.lambda_tv,
            Response::VoltageCollapse => self.lambda_vc,
        }
    }
}

/// The three stochastic responses of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    VoltageViolation,
    ThermalViolation,
    VoltageCollapse,
}

impl Response {
    pub const ALL: [Response; 3] = [
        Response::VoltageViolation,
        Response::ThermalViolation,
        Response::VoltageCollapse,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Response::VoltageViolation => "vv",
            Response::ThermalViolation => "tv",
            Response::VoltageCollapse => "vc",
        }
    }
}

/// Phase current magnitudes (A) of one branch at a converged state, the
/// larger of the two ends.
pub fn branch_current_amps(
    feeder: &FeederModel,
    y: &YBus,
    branch: usize,
    sol: &PfSolution,
) -> Vec<f64> {
    let br = &feeder.branches[branch];
    let k = br.phases.len();
    let ys = &y.branch_y[branch];
    let t = br.tap;
    let vf: Vec<Complex64> = br
        .phases
        .iter()
        .map(|&p| {
            let n = feeder.node_id(br.from, p).expect("branch phase");
            Complex64::from_polar(sol.v[n], sol.theta[n])
        })
        .collect();
    let vt: Vec<Complex64> = br
        .phases
        .iter()
        .map(|&p| {
            let n = feeder.node_id(br.to, p).expect("branch phase");
            Complex64::from_polar(sol.v[n], sol.theta[n])
        })
        .collect();
    let shunt = Complex64::new(0.0, br.b_shunt_pu / 2.0);
    let ibase = feeder.i_base_amps();
    (0..k)
        .map(|i| {
            let mut i_from = Complex64::new(0.0, 0.0);
            let mut i_to = Complex64::new(0.0, 0.0);
            for j in 0..k {
                let dv = vf[j] / t - vt[j];
                i_from += ys[(i, j)] * dv / t;
                i_to += ys[(i, j)] * dv;
            }
            i_from += shunt * vf[i] / (t * t);
            i_to = -i_to + shunt * vt[i];
            i_from.norm().max(i_to.norm()) * ibase
        })
        .collect()
}

/// Reads the three margins off a trace. Margins that never bind clamp to
/// the nose. Only the traced (upper) branch is scanned.
pub fn extract_adc(
    trace: &ContinuationTrace,
    feeder: &FeederModel,
    b: &VariationVector,
) -> AdcTriple {
    let mw = b.mw_per_lambda(feeder);
    let nose = trace.nose_lambda;

    let mut vv: Option<(f64, BindingLimit)> = None;
    let mut tv: Option<(f64, BindingLimit)> = None;
    for ev in &trace.events {
        match *ev {
            TraceEvent::VoltageLow { lambda, node } if vv.is_none() => {
                vv = Some((
                    lambda,
                    BindingLimit::LowerVoltage { element: feeder.node_label(node) },
                ));
            }
            TraceEvent::VoltageHigh { lambda, node } if vv.is_none() => {
                vv = Some((
                    lambda,
                    BindingLimit::UpperVoltage { element: feeder.node_label(node) },
                ));
            }
            TraceEvent::Thermal { lambda, branch, phase } if tv.is_none() => {
                let br = &feeder.branches[branch];
                let label = format!(
                    "{}-{}_{}",
                    feeder.buses[br.from].id,
                    feeder.buses[br.to].id,
                    br.phases[phase].letter()
                );
                tv = Some((lambda, BindingLimit::Thermal { element: label }));
            }
            _ => {}
        }
    }
    let (lam_vv, bind_vv) = vv.unwrap_or((nose, BindingLimit::Collapse));
    let (lam_tv, bind_tv) = tv.unwrap_or((nose, BindingLimit::Collapse));
    let lambda_vv = lam_vv.min(nose) * mw;
    let lambda_tv = lam_tv.min(nose) * mw;
    let lambda_vc = nose * mw;
    AdcTriple {
        lambda_vv,
        lambda_tv,
        lambda_vc,
        overall: lambda_vv.min(lambda_tv).min(lambda_vc),
        binding_vv: bind_vv,
        binding_tv: bind_tv,
        binding_vc: BindingLimit::Collapse,
    }
}
