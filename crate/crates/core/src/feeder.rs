//! Unbalanced three-phase feeder data model.
//!
//! A feeder document (JSON, see [`parse_feeder`]) declares buses with their
//! phase sets, branches with per-phase impedance matrices in ohms, ZIP
//! loads, and renewable units with their power curves. Parsing validates the
//! electrical invariants (unique slack, connectivity, phase consistency,
//! positive ampacities) and converts everything to per-unit on a per-phase
//! base: `S_phase = baseMVA/3`, `V_phase = baseKV/√3`, `Z_base =
//! baseKV²/baseMVA`.
//!
//! The random inputs of a study are ordered wind speeds first (document
//! order), then solar radiations, then load powers; [`build_variation_vector`]
//! turns one realization of that vector into the per-node growth direction
//! scaled by the continuation parameter.

use std::collections::{HashMap, HashSet, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Marginal;

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("invalid feeder document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate bus id {0:?}")]
    DuplicateBus(String),
    #[error("{context} references unknown bus {id:?}")]
    UnknownBus { id: String, context: String },
    #[error("exactly one slack bus required, found {0}")]
    SlackCount(usize),
    #[error("bus {0:?} is not connected to the slack bus")]
    Disconnected(String),
    #[error("branch {from:?}→{to:?}: impedance matrix is {got}×{got2} but the endpoints share {want} phase(s)")]
    ZDimensionMismatch { from: String, to: String, got: usize, got2: usize, want: usize },
    #[error("branch {from:?}→{to:?} carries phase {phase} its endpoints lack")]
    PhaseMismatch { from: String, to: String, phase: char },
    #[error("branch {from:?}→{to:?}: ampacity must be positive, got {value}")]
    NonPositiveAmpacity { from: String, to: String, value: f64 },
    #[error("bus {0:?}: vmin must be below vmax")]
    VoltageBand(String),
    #[error("bus {id:?}: {what}")]
    BadBus { id: String, what: String },
    #[error("load at bus {bus:?} phase {phase}: {what}")]
    BadLoad { bus: String, phase: char, what: String },
    #[error("renewable unit at bus {bus:?}: {what}")]
    BadRes { bus: String, what: String },
    #[error("renewable unit at bus {bus:?} has no input marginal and no class default was supplied")]
    MissingMarginal { bus: String },
    #[error("input realization has {got} entries, feeder defines {want} random inputs")]
    InputDimension { got: usize, want: usize },
}

/// One of the three phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    /// Reference angle of the phase at the slack bus (radians).
    pub fn reference_angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    fn from_letter(c: char) -> Option<Phase> {
        match c {
            'a' | 'A' => Some(Phase::A),
            'b' | 'B' => Some(Phase::B),
            'c' | 'C' => Some(Phase::C),
            _ => None,
        }
    }
}

fn parse_phases(s: &str) -> Option<Vec<Phase>> {
    let mut out: Vec<Phase> = s.chars().map(Phase::from_letter).collect::<Option<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pq,
    Pv,
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: String,
    pub phases: Vec<Phase>,
    pub kind: BusKind,
    /// Initial / regulated voltage magnitude (p.u.).
    pub v0: f64,
    pub vmin: f64,
    pub vmax: f64,
    /// PV reactive limits per phase (p.u.).
    pub qmin: f64,
    pub qmax: f64,
    /// Shunt capacitor susceptance per phase (p.u., +j injects vars).
    pub shunt_b: [f64; 3],
    /// Deterministic generation growth per phase (p.u.).
    pub dpg: [f64; 3],
    pub dqg: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub phases: Vec<Phase>,
    /// Series impedance matrix over `phases` (p.u.).
    pub z_pu: Vec<Vec<Complex64>>,
    /// Total line-charging susceptance per phase (p.u.), split half per end.
    pub b_shunt_pu: f64,
    /// Current rating per phase (A).
    pub ampacity: f64,
    pub tap: f64,
}

#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub bus: usize,
    pub phase: Phase,
    pub p_kw: f64,
    pub q_kvar: f64,
    /// Constant-power / constant-current / constant-impedance weights.
    pub zip: [f64; 3],
    /// Standard deviation of the load-growth marginal as a fraction of the
    /// base power.
    pub stdev_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResKind {
    Wind,
    Solar,
}

#[derive(Debug, Clone)]
pub struct ResUnit {
    pub kind: ResKind,
    pub bus: usize,
    pub phases: Vec<Phase>,
    pub p_rated_kw: f64,
    /// Wind curve parameters (m/s); unused for solar.
    pub v_in: f64,
    pub v_rated: f64,
    pub v_out: f64,
    /// Power factor of the wind unit (lagging); solar runs at unity.
    pub pf: f64,
    /// Solar curve parameters (W/m²); unused for wind.
    pub r_c: f64,
    pub r_std: f64,
    /// Input marginal override (wind speed or radiation).
    pub marginal: Option<Marginal>,
}

/// Identification of one random input.
#[derive(Debug, Clone, PartialEq)]
pub enum InputLabel {
    Wind { bus: String },
    Solar { bus: String },
    Load { bus: String, phase: char },
}

impl InputLabel {
    pub fn column_name(&self) -> String {
        match self {
            InputLabel::Wind { bus } => format!("wind_{bus}"),
            InputLabel::Solar { bus } => format!("solar_{bus}"),
            InputLabel::Load { bus, phase } => format!("load_{bus}_{phase}"),
        }
    }
}

/// Validated feeder model in per-unit.
#[derive(Debug, Clone)]
pub struct FeederModel {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<LoadSpec>,
    /// Wind units first, then solar units (document order within a kind).
    pub res_units: Vec<ResUnit>,
    node_ids: HashMap<(usize, usize), usize>,
    nodes: Vec<(usize, Phase)>,
    slack_bus: usize,
}

impl FeederModel {
    /// Per-phase power base in kW.
    pub fn s_phase_kw(&self) -> f64 {
        self.base_mva * 1000.0 / 3.0
    }

    /// Per-phase power base in MW.
    pub fn s_phase_mw(&self) -> f64 {
        self.base_mva / 3.0
    }

    /// Current base in amperes.
    pub fn i_base_amps(&self) -> f64 {
        self.base_mva * 1e6 / (3.0f64.sqrt() * self.base_kv * 1e3)
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    /// All (bus index, phase) nodes in solver order.
    pub fn nodes(&self) -> &[(usize, Phase)] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_id(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_ids.get(&(bus, phase.index())).copied()
    }

    pub fn node_label(&self, node: usize) -> String {
        let (b, ph) = self.nodes[node];
        format!("{}_{}", self.buses[b].id, ph.letter())
    }

    pub fn wind_units(&self) -> impl Iterator<Item = &ResUnit> {
        self.res_units.iter().filter(|u| u.kind == ResKind::Wind)
    }

    pub fn solar_units(&self) -> impl Iterator<Item = &ResUnit> {
        self.res_units.iter().filter(|u| u.kind == ResKind::Solar)
    }

    /// Number of random inputs: one per renewable unit plus one per load.
    pub fn input_count(&self) -> usize {
        self.res_units.len() + self.loads.len()
    }

    pub fn input_labels(&self) -> Vec<InputLabel> {
        let mut out = Vec::with_capacity(self.input_count());
        for u in &self.res_units {
            let bus = self.buses[u.bus].id.clone();
            out.push(match u.kind {
                ResKind::Wind => InputLabel::Wind { bus },
                ResKind::Solar => InputLabel::Solar { bus },
            });
        }
        for l in &self.loads {
            out.push(InputLabel::Load {
                bus: self.buses[l.bus].id.clone(),
                phase: l.phase.letter(),
            });
        }
        out
    }

    /// Marginal of each random input, applying class defaults where a unit
    /// does not carry its own; load marginals are Normal with mean at the
    /// base power and the configured fractional standard deviation.
    pub fn input_marginals(
        &self,
        wind_default: Option<&Marginal>,
        solar_default: Option<&Marginal>,
    ) -> Result<Vec<Marginal>, FeederError> {
        let mut out = Vec::with_capacity(self.input_count());
        for u in &self.res_units {
            let default = match u.kind {
                ResKind::Wind => wind_default,
                ResKind::Solar => solar_default,
            };
            let m = u.marginal.clone().or_else(|| default.cloned()).ok_or_else(|| {
                FeederError::MissingMarginal { bus: self.buses[u.bus].id.clone() }
            })?;
            out.push(m);
        }
        for l in &self.loads {
            out.push(Marginal::Normal { mean: l.p_kw, stdev: l.stdev_frac * l.p_kw });
        }
        Ok(out)
    }

    /// Class of each random input, aligned with [`input_marginals`].
    pub fn input_classes(&self) -> Vec<InputClass> {
        let mut out = Vec::with_capacity(self.input_count());
        for u in &self.res_units {
            out.push(match u.kind {
                ResKind::Wind => InputClass::Wind,
                ResKind::Solar => InputClass::Solar,
            });
        }
        out.extend(std::iter::repeat_n(InputClass::Load, self.loads.len()));
        out
    }

    /// Base consumption of all loads: (ΣP, ΣQ) in kW/kvar.
    pub fn total_load(&self) -> (f64, f64) {
        self.loads
            .iter()
            .fold((0.0, 0.0), |(p, q), l| (p + l.p_kw, q + l.q_kvar))
    }
}

/// Input class, used to expand block correlation shorthands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputClass {
    Wind,
    Solar,
    Load,
}

// ---------------------------------------------------------------------------
// document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederDoc {
    #[serde(rename = "baseMVA")]
    base_mva: f64,
    #[serde(rename = "baseKV")]
    base_kv: f64,
    buses: Vec<BusDoc>,
    branches: Vec<BranchDoc>,
    #[serde(default)]
    loads: Vec<LoadDoc>,
    #[serde(default)]
    res: Vec<ResDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: String,
    phases: String,
    kind: String,
    #[serde(default = "default_v0")]
    v0: f64,
    #[serde(default = "default_vmin")]
    vmin: f64,
    #[serde(default = "default_vmax")]
    vmax: f64,
    qmin_kvar: Option<f64>,
    qmax_kvar: Option<f64>,
    /// Shunt capacitor kvar per phase (order a, b, c for the bus's phases).
    shunt_kvar: Option<Vec<f64>>,
    /// Deterministic generation growth (kW / kvar, split across phases).
    #[serde(default)]
    dpg_kw: f64,
    #[serde(default)]
    dqg_kvar: f64,
}

fn default_v0() -> f64 {
    1.0
}
fn default_vmin() -> f64 {
    0.90
}
fn default_vmax() -> f64 {
    1.10
}

#[derive(Debug, Deserialize, Serialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct ZEntry {
    r: f64,
    x: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    from: String,
    to: String,
    /// Explicit phase override; defaults to the endpoints' shared phases.
    phases: Option<String>,
    /// Series impedance matrix in ohms over the branch phases.
    z: Vec<Vec<ZEntry>>,
    /// Total charging susceptance per phase, micro-siemens.
    #[serde(default)]
    b_us: f64,
    ampacity: f64,
    #[serde(default = "default_tap")]
    tap: f64,
}

fn default_tap() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadDoc {
    bus: String,
    phase: String,
    p_kw: f64,
    q_kvar: f64,
    /// [constant-PQ, constant-I, constant-Z] weights; must sum to 1.
    #[serde(default = "default_zip")]
    zip: [f64; 3],
    growth: GrowthDoc,
}

fn default_zip() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrowthDoc {
    family: String,
    stdev_frac: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResDoc {
    kind: String,
    bus: String,
    phases: Option<String>,
    p_rated_kw: f64,
    // wind curve
    v_in: Option<f64>,
    v_rated: Option<f64>,
    v_out: Option<f64>,
    #[serde(default = "default_pf")]
    pf: f64,
    // solar curve
    r_c: Option<f64>,
    r_std: Option<f64>,
    marginal: Option<Marginal>,
}

fn default_pf() -> f64 {
    0.85
}

// ---------------------------------------------------------------------------
// parsing and validation
// ---------------------------------------------------------------------------

/// Parses and validates a feeder document.
pub fn parse_feeder(document: &str) -> Result<FeederModel, FeederError> {
    let doc: FeederDoc = serde_json::from_str(document)?;
    build_model(doc)
}

fn build_model(doc: FeederDoc) -> Result<FeederModel, FeederError> {
    let s_phase_kw = doc.base_mva * 1000.0 / 3.0;
    let z_base = doc.base_kv * doc.base_kv / doc.base_mva;

    let mut ids = HashSet::new();
    let mut buses = Vec::with_capacity(doc.buses.len());
    let mut slack = Vec::new();
    for b in &doc.buses {
        if !ids.insert(b.id.clone()) {
            return Err(FeederError::DuplicateBus(b.id.clone()));
        }
        let phases = parse_phases(&b.phases).ok_or_else(|| FeederError::BadBus {
            id: b.id.clone(),
            what: format!("invalid phase set {:?}", b.phases),
        })?;
        let kind = match b.kind.as_str() {
            "slack" => BusKind::Slack,
            "pq" => BusKind::Pq,
            "pv" => BusKind::Pv,
            other => {
                return Err(FeederError::BadBus {
                    id: b.id.clone(),
                    what: format!("unknown kind {other:?}"),
                })
            }
        };
        if kind == BusKind::Slack {
            slack.push(buses.len());
        }
        if !(b.vmin < b.vmax) {
            return Err(FeederError::VoltageBand(b.id.clone()));
        }
        let (qmin, qmax) = match kind {
            BusKind::Pv => {
                let qmin = b.qmin_kvar.ok_or_else(|| FeederError::BadBus {
                    id: b.id.clone(),
                    what: "pv bus requires qmin_kvar".into(),
                })?;
                let qmax = b.qmax_kvar.ok_or_else(|| FeederError::BadBus {
                    id: b.id.clone(),
                    what: "pv bus requires qmax_kvar".into(),
                })?;
                if !(qmin < qmax) {
                    return Err(FeederError::BadBus {
                        id: b.id.clone(),
                        what: "qmin_kvar must be below qmax_kvar".into(),
                    });
                }
                (qmin / s_phase_kw, qmax / s_phase_kw)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let mut shunt_b = [0.0f64; 3];
        if let Some(sh) = &b.shunt_kvar {
            if sh.len() != phases.len() {
                return Err(FeederError::BadBus {
                    id: b.id.clone(),
                    what: format!(
                        "shunt_kvar has {} entries for {} phases",
                        sh.len(),
                        phases.len()
                    ),
                });
            }
            for (ph, kvar) in phases.iter().zip(sh) {
                // B such that Q = B·V² reproduces the rated kvar at V = 1
                shunt_b[ph.index()] = kvar / s_phase_kw;
            }
        }
        let nph = phases.len() as f64;
        let mut dpg = [0.0; 3];
        let mut dqg = [0.0; 3];
        for ph in &phases {
            dpg[ph.index()] = b.dpg_kw / s_phase_kw / nph;
            dqg[ph.index()] = b.dqg_kvar / s_phase_kw / nph;
        }
        buses.push(Bus {
            id: b.id.clone(),
            phases,
            kind,
            v0: b.v0,
            vmin: b.vmin,
            vmax: b.vmax,
            qmin,
            qmax,
            shunt_b,
            dpg,
            dqg,
        });
    }
    if slack.len() != 1 {
        return Err(FeederError::SlackCount(slack.len()));
    }
    let slack_bus = slack[0];
    let index_of: HashMap<&str, usize> =
        buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();

    let mut branches = Vec::with_capacity(doc.branches.len());
    for br in &doc.branches {
        let from = *index_of.get(br.from.as_str()).ok_or_else(|| FeederError::UnknownBus {
            id: br.from.clone(),
            context: format!("branch {:?}→{:?}", br.from, br.to),
        })?;
        let to = *index_of.get(br.to.as_str()).ok_or_else(|| FeederError::UnknownBus {
            id: br.to.clone(),
            context: format!("branch {:?}→{:?}", br.from, br.to),
        })?;
        let shared: Vec<Phase> = Phase::ALL
            .iter()
            .copied()
            .filter(|p| buses[from].phases.contains(p) && buses[to].phases.contains(p))
            .collect();
        let phases = match &br.phases {
            None => shared.clone(),
            Some(s) => {
                let requested = parse_phases(s).ok_or_else(|| FeederError::BadBus {
                    id: br.from.clone(),
                    what: format!("invalid branch phase set {s:?}"),
                })?;
                for p in &requested {
                    if !shared.contains(p) {
                        return Err(FeederError::PhaseMismatch {
                            from: br.from.clone(),
                            to: br.to.clone(),
                            phase: p.letter(),
                        });
                    }
                }
                requested
            }
        };
        if phases.is_empty() {
            return Err(FeederError::PhaseMismatch {
                from: br.from.clone(),
                to: br.to.clone(),
                phase: '-',
            });
        }
        let n = phases.len();
        if br.z.len() != n || br.z.iter().any(|row| row.len() != n) {
            return Err(FeederError::ZDimensionMismatch {
                from: br.from.clone(),
                to: br.to.clone(),
                got: br.z.len(),
                got2: br.z.first().map_or(0, |r| r.len()),
                want: n,
            });
        }
        if !(br.ampacity > 0.0) {
            return Err(FeederError::NonPositiveAmpacity {
                from: br.from.clone(),
                to: br.to.clone(),
                value: br.ampacity,
            });
        }
        let z_pu: Vec<Vec<Complex64>> = br
            .z
            .iter()
            .map(|row| row.iter().map(|e| Complex64::new(e.r, e.x) / z_base).collect())
            .collect();
        branches.push(Branch {
            from,
            to,
            phases,
            z_pu,
            b_shunt_pu: br.b_us * 1e-6 * z_base,
            ampacity: br.ampacity,
            tap: br.tap,
        });
    }

    // connectivity from the slack over branch adjacency
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); buses.len()];
    for br in &branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; buses.len()];
    let mut queue = VecDeque::from([slack_bus]);
    seen[slack_bus] = true;
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(FeederError::Disconnected(buses[i].id.clone()));
    }

    let mut loads = Vec::with_capacity(doc.loads.len());
    for l in &doc.loads {
        let bus = *index_of.get(l.bus.as_str()).ok_or_else(|| FeederError::UnknownBus {
            id: l.bus.clone(),
            context: "load".into(),
        })?;
        let phase = parse_phases(&l.phase)
            .filter(|v| v.len() == 1)
            .map(|v| v[0])
            .ok_or_else(|| FeederError::BadLoad {
                bus: l.bus.clone(),
                phase: l.phase.chars().next().unwrap_or('?'),
                what: "phase must be a single letter".into(),
            })?;
        let bad = |what: String| FeederError::BadLoad { bus: l.bus.clone(), phase: phase.letter(), what };
        if !buses[bus].phases.contains(&phase) {
            return Err(bad("bus lacks this phase".into()));
        }
        if bus == slack_bus {
            return Err(bad("loads may not sit on the slack bus".into()));
        }
        if !(l.p_kw > 0.0) {
            return Err(bad(format!("p_kw must be positive, got {}", l.p_kw)));
        }
        let zsum: f64 = l.zip.iter().sum();
        if l.zip.iter().any(|w| *w < 0.0) || (zsum - 1.0).abs() > 1e-9 {
            return Err(bad(format!("zip weights must be nonnegative and sum to 1, got {:?}", l.zip)));
        }
        if l.growth.family != "normal" {
            return Err(bad(format!("growth family must be \"normal\", got {:?}", l.growth.family)));
        }
        if !(l.growth.stdev_frac >= 0.0) {
            return Err(bad("growth stdev_frac must be nonnegative".into()));
        }
        loads.push(LoadSpec {
            bus,
            phase,
            p_kw: l.p_kw,
            q_kvar: l.q_kvar,
            zip: l.zip,
            stdev_frac: l.growth.stdev_frac,
        });
    }

    let mut wind = Vec::new();
    let mut solar = Vec::new();
    for r in &doc.res {
        let bus = *index_of.get(r.bus.as_str()).ok_or_else(|| FeederError::UnknownBus {
            id: r.bus.clone(),
            context: "res unit".into(),
        })?;
        let bad = |what: String| FeederError::BadRes { bus: r.bus.clone(), what };
        if bus == slack_bus {
            return Err(bad("renewable units may not sit on the slack bus".into()));
        }
        if !(r.p_rated_kw > 0.0) {
            return Err(bad(format!("p_rated_kw must be positive, got {}", r.p_rated_kw)));
        }
        let phases = match &r.phases {
            None => buses[bus].phases.clone(),
            Some(s) => {
                let req = parse_phases(s).ok_or_else(|| bad(format!("invalid phase set {s:?}")))?;
                for p in &req {
                    if !buses[bus].phases.contains(p) {
                        return Err(bad(format!("bus lacks phase {}", p.letter())));
                    }
                }
                req
            }
        };
        match r.kind.as_str() {
            "wind" => {
                let v_in = r.v_in.ok_or_else(|| bad("wind unit requires v_in".into()))?;
                let v_rated = r.v_rated.ok_or_else(|| bad("wind unit requires v_rated".into()))?;
                let v_out = r.v_out.ok_or_else(|| bad("wind unit requires v_out".into()))?;
                if !(v_in < v_rated && v_rated < v_out) {
                    return Err(bad(format!(
                        "wind curve requires v_in < v_rated < v_out, got ({v_in}, {v_rated}, {v_out})"
                    )));
                }
                if !(r.pf > 0.0 && r.pf <= 1.0) {
                    return Err(bad(format!("power factor must lie in (0, 1], got {}", r.pf)));
                }
                wind.push(ResUnit {
                    kind: ResKind::Wind,
                    bus,
                    phases,
                    p_rated_kw: r.p_rated_kw,
                    v_in,
                    v_rated,
                    v_out,
                    pf: r.pf,
                    r_c: 0.0,
                    r_std: 0.0,
                    marginal: r.marginal.clone(),
                });
            }
            "solar" => {
                let r_c = r.r_c.ok_or_else(|| bad("solar unit requires r_c".into()))?;
                let r_std = r.r_std.ok_or_else(|| bad("solar unit requires r_std".into()))?;
                if !(0.0 < r_c && r_c < r_std) {
                    return Err(bad(format!(
                        "solar curve requires 0 < r_c < r_std, got ({r_c}, {r_std})"
                    )));
                }
                solar.push(ResUnit {
                    kind: ResKind::Solar,
                    bus,
                    phases,
                    p_rated_kw: r.p_rated_kw,
                    v_in: 0.0,
                    v_rated: 0.0,
                    v_out: 0.0,
                    pf: 1.0,
                    r_c,
                    r_std,
                    marginal: r.marginal.clone(),
                });
            }
            other => return Err(bad(format!("unknown res kind {other:?}"))),
        }
    }
    let mut res_units = wind;
    res_units.append(&mut solar);

    let mut nodes = Vec::new();
    let mut node_ids = HashMap::new();
    for (bi, b) in buses.iter().enumerate() {
        for &p in &b.phases {
            node_ids.insert((bi, p.index()), nodes.len());
            nodes.push((bi, p));
        }
    }

    Ok(FeederModel {
        base_mva: doc.base_mva,
        base_kv: doc.base_kv,
        buses,
        branches,
        loads,
        res_units,
        node_ids,
        nodes,
        slack_bus,
    })
}

// ---------------------------------------------------------------------------
// power curves
// ---------------------------------------------------------------------------

/// Active wind output (kW) for a wind speed (m/s): zero outside the cut-in /
/// cut-out window, linear between cut-in and rated, flat at rated power up
/// to cut-out.
pub fn wind_power(unit: &ResUnit, v: f64) -> f64 {
    debug_assert_eq!(unit.kind, ResKind::Wind);
    if v <= unit.v_in || v > unit.v_out {
        0.0
    } else if v <= unit.v_rated {
        unit.p_rated_kw * (v - unit.v_in) / (unit.v_rated - unit.v_in)
    } else {
        unit.p_rated_kw
    }
}

/// Reactive wind output (kvar) at constant lagging power factor.
pub fn wind_reactive(unit: &ResUnit, p_kw: f64) -> f64 {
    p_kw * (unit.pf.acos()).tan()
}

/// Solar output (kW) for a radiation (W/m²): quadratic below the low
/// radiation point, linear up to standard radiation, rated above.
pub fn solar_power(unit: &ResUnit, r: f64) -> f64 {
    debug_assert_eq!(unit.kind, ResKind::Solar);
    if r < 0.0 {
        0.0
    } else if r < unit.r_c {
        unit.p_rated_kw * r * r / (unit.r_c * unit.r_std)
    } else if r <= unit.r_std {
        unit.p_rated_kw * r / unit.r_std
    } else {
        unit.p_rated_kw
    }
}

// ---------------------------------------------------------------------------
// variation vector
// ---------------------------------------------------------------------------

/// Per-node load-generation growth direction (p.u.), scaled downstream by
/// the continuation parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl VariationVector {
    pub fn is_zero(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|v| v.abs() < 1e-14)
    }

    /// Total active growth magnitude in MW when λ = 1; reported delivery
    /// margins are λ times this.
    pub fn mw_per_lambda(&self, feeder: &FeederModel) -> f64 {
        self.p.iter().map(|v| v.abs()).sum::<f64>() * feeder.s_phase_mw()
    }
}

/// Assembles the variation vector for one realization `u` of the random
/// inputs: renewable injections from their power curves plus deterministic
/// generation growth, minus the realized load increments (reactive load
/// growth follows the base power factor).
pub fn build_variation_vector(
    feeder: &FeederModel,
    u: &[f64],
) -> Result<VariationVector, FeederError> {
    let want = feeder.input_count();
    if u.len() != want {
        return Err(FeederError::InputDimension { got: u.len(), want });
    }
    let s_kw = feeder.s_phase_kw();
    let n = feeder.node_count();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];

    for (k, unit) in feeder.res_units.iter().enumerate() {
        let (pk, qk) = match unit.kind {
            ResKind::Wind => {
                let pw = wind_power(unit, u[k]);
                (pw, wind_reactive(unit, pw))
            }
            ResKind::Solar => (solar_power(unit, u[k]), 0.0),
        };
        let share = 1.0 / unit.phases.len() as f64;
        for &ph in &unit.phases {
            let node = feeder
                .node_id(unit.bus, ph)
                .expect("res phases validated against the bus");
            p[node] += pk * share / s_kw;
            q[node] += qk * share / s_kw;
        }
    }

    for (bi, bus) in feeder.buses.iter().enumerate() {
        for &ph in &bus.phases {
            let node = feeder.node_id(bi, ph).expect("node exists");
            p[node] += bus.dpg[ph.index()];
            q[node] += bus.dqg[ph.index()];
        }
    }

    let off = feeder.res_units.len();
    for (li, load) in feeder.loads.iter().enumerate() {
        let dp = u[off + li];
        let dq = dp * load.q_kvar / load.p_kw;
        let node = feeder
            .node_id(load.bus, load.phase)
            .expect("load phase validated against the bus");
        p[node] -= dp / s_kw;
        q[node] -= dq / s_kw;
    }
    Ok(VariationVector { p, q })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_bus_doc() -> String {
        r#"{
            "baseMVA": 1.0,
            "baseKV": 4.16,
            "buses": [
                {"id": "src", "phases": "a", "kind": "slack"},
                {"id": "ld", "phases": "a", "kind": "pq"}
            ],
            "branches": [
                {"from": "src", "to": "ld", "z": [[{"r": 0.2, "x": 1.0}]], "ampacity": 400.0}
            ],
            "loads": [
                {"bus": "ld", "phase": "a", "p_kw": 100.0, "q_kvar": 50.0,
                 "zip": [1.0, 0.0, 0.0], "growth": {"family": "normal", "stdev_frac": 0.05}}
            ],
            "res": []
        }"#
        .to_string()
    }

    #[test]
    fn parses_two_bus_toy() {
        let f = parse_feeder(&two_bus_doc()).unwrap();
        assert_eq!(f.buses.len(), 2);
        assert_eq!(f.branches.len(), 1);
        assert_eq!(f.node_count(), 2);
        assert_eq!(f.input_count(), 1);
        // ohms to per unit
        let zb = 4.16 * 4.16 / 1.0;
        assert_abs_diff_eq!(f.branches[0].z_pu[0][0].re, 0.2 / zb, epsilon = 1e-15);
    }

    #[test]
    fn unknown_bus_named_in_error() {
        let doc = two_bus_doc().replace(r#""to": "ld""#, r#""to": "nowhere""#);
        let err = parse_feeder(&doc).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let doc = two_bus_doc().replace(r#""baseMVA": 1.0,"#, r#""baseMVA": 1.0, "bogus": 1,"#);
        assert!(matches!(parse_feeder(&doc), Err(FeederError::Parse(_))));
    }

    #[test]
    fn duplicate_and_missing_slack_rejected() {
        let dup = two_bus_doc().replace(r#""id": "ld""#, r#""id": "src""#);
        assert!(matches!(parse_feeder(&dup), Err(FeederError::DuplicateBus(_))));
        let noslack = two_bus_doc().replace(r#""kind": "slack""#, r#""kind": "pq""#);
        assert!(matches!(parse_feeder(&noslack), Err(FeederError::SlackCount(0))));
    }

    #[test]
    fn disconnected_bus_rejected() {
        let doc = r#"{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {"id": "s", "phases": "a", "kind": "slack"},
                {"id": "m", "phases": "a", "kind": "pq"},
                {"id": "island", "phases": "a", "kind": "pq"}
            ],
            "branches": [
                {"from": "s", "to": "m", "z": [[{"r": 0.1, "x": 0.5}]], "ampacity": 100}
            ],
            "loads": [], "res": []
        }"#;
        assert!(matches!(parse_feeder(doc), Err(FeederError::Disconnected(id)) if id == "island"));
    }

    #[test]
    fn z_dimension_must_match_shared_phases() {
        let doc = two_bus_doc().replace(
            r#""z": [[{"r": 0.2, "x": 1.0}]]"#,
            r#""z": [[{"r": 0.2, "x": 1.0}, {"r": 0.0, "x": 0.1}], [{"r": 0.0, "x": 0.1}, {"r": 0.2, "x": 1.0}]]"#,
        );
        assert!(matches!(parse_feeder(&doc), Err(FeederError::ZDimensionMismatch { .. })));
    }

    #[test]
    fn nonpositive_ampacity_rejected() {
        let doc = two_bus_doc().replace(r#""ampacity": 400.0"#, r#""ampacity": 0.0"#);
        assert!(matches!(parse_feeder(&doc), Err(FeederError::NonPositiveAmpacity { .. })));
    }

    #[test]
    fn wind_curve_values() {
        let unit = ResUnit {
            kind: ResKind::Wind,
            bus: 0,
            phases: vec![Phase::A],
            p_rated_kw: 450.0,
            v_in: 4.0,
            v_rated: 15.0,
            v_out: 25.0,
            pf: 0.85,
            r_c: 0.0,
            r_std: 0.0,
            marginal: None,
        };
        assert_eq!(wind_power(&unit, 3.0), 0.0);
        assert_eq!(wind_power(&unit, 15.0), 450.0);
        assert_abs_diff_eq!(wind_power(&unit, 9.5), 450.0 * 5.5 / 11.0, epsilon = 1e-12);
        assert_eq!(wind_power(&unit, 25.0), 450.0);
        assert_eq!(wind_power(&unit, 25.000001), 0.0);
        // continuity at the curve knees
        assert_abs_diff_eq!(wind_power(&unit, 4.0 + 1e-12), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(wind_power(&unit, 15.0 - 1e-9), 450.0, epsilon = 1e-6);
        // nondecreasing on [0, v_out]
        let mut last = 0.0;
        for i in 0..=2500 {
            let v = i as f64 * 0.01;
            let p = wind_power(&unit, v);
            assert!(p + 1e-12 >= last);
            last = p;
        }
    }

    #[test]
    fn solar_curve_values() {
        let unit = ResUnit {
            kind: ResKind::Solar,
            bus: 0,
            phases: vec![Phase::A],
            p_rated_kw: 180.0,
            v_in: 0.0,
            v_rated: 0.0,
            v_out: 0.0,
            pf: 1.0,
            r_c: 150.0,
            r_std: 1000.0,
            marginal: None,
        };
        assert_abs_diff_eq!(solar_power(&unit, 1000.0), 180.0);
        assert_abs_diff_eq!(solar_power(&unit, 1200.0), 180.0);
        assert_abs_diff_eq!(solar_power(&unit, 100.0), 180.0 * 100.0 * 100.0 / 150000.0, epsilon = 1e-12);
        // the quadratic and linear branches agree at r_c
        assert_abs_diff_eq!(
            solar_power(&unit, 150.0 - 1e-9),
            solar_power(&unit, 150.0),
            epsilon = 1e-9
        );
    }

    fn res_feeder() -> FeederModel {
        let doc = r#"{
            "baseMVA": 1.0, "baseKV": 4.16,
            "buses": [
                {"id": "s", "phases": "abc", "kind": "slack"},
                {"id": "m", "phases": "abc", "kind": "pq"},
                {"id": "w", "phases": "a", "kind": "pq"}
            ],
            "branches": [
                {"from": "s", "to": "m",
                 "z": [[{"r": 0.1, "x": 0.5}, {"r": 0.02, "x": 0.1}, {"r": 0.02, "x": 0.1}],
                        [{"r": 0.02, "x": 0.1}, {"r": 0.1, "x": 0.5}, {"r": 0.02, "x": 0.1}],
                        [{"r": 0.02, "x": 0.1}, {"r": 0.02, "x": 0.1}, {"r": 0.1, "x": 0.5}]],
                 "ampacity": 400},
                {"from": "m", "to": "w", "z": [[{"r": 0.3, "x": 0.7}]], "ampacity": 150}
            ],
            "loads": [
                {"bus": "m", "phase": "b", "p_kw": 200.0, "q_kvar": 100.0,
                 "growth": {"family": "normal", "stdev_frac": 0.05}}
            ],
            "res": [
                {"kind": "wind", "bus": "w", "p_rated_kw": 450.0,
                 "v_in": 4.0, "v_rated": 15.0, "v_out": 25.0, "pf": 0.85}
            ]
        }"#;
        parse_feeder(doc).unwrap()
    }

    #[test]
    fn variation_vector_signs_and_values() {
        let f = res_feeder();
        // wind at 9.5 m/s, load at its base value
        let u = vec![9.5, 200.0];
        let b = build_variation_vector(&f, &u).unwrap();
        let s = f.s_phase_kw();
        let wind_node = f.node_id(2, Phase::A).unwrap();
        let load_node = f.node_id(1, Phase::B).unwrap();
        let pw = 450.0 * 5.5 / 11.0;
        assert_abs_diff_eq!(b.p[wind_node], pw / s, epsilon = 1e-12);
        assert_abs_diff_eq!(b.q[wind_node], pw * (0.85f64.acos()).tan() / s, epsilon = 1e-12);
        assert_abs_diff_eq!(b.p[load_node], -200.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(b.q[load_node], -100.0 / s, epsilon = 1e-12);
        // pure load growth leaves negative entries only
        let b2 = build_variation_vector(&f, &[0.0, 200.0]).unwrap();
        assert!(b2.p.iter().all(|&v| v <= 0.0));
        assert!(!b2.is_zero());
        // λ·b homogeneity scale: MW per unit lambda
        assert_abs_diff_eq!(b2.mw_per_lambda(&f), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn variation_vector_affine_in_load_power() {
        let f = res_feeder();
        let b0 = build_variation_vector(&f, &[6.0, 100.0]).unwrap();
        let b1 = build_variation_vector(&f, &[6.0, 300.0]).unwrap();
        let bm = build_variation_vector(&f, &[6.0, 200.0]).unwrap();
        let load_node = f.node_id(1, Phase::B).unwrap();
        assert_abs_diff_eq!(
            bm.p[load_node],
            0.5 * (b0.p[load_node] + b1.p[load_node]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_direction_flagged() {
        let f = res_feeder();
        let b = build_variation_vector(&f, &[0.0, 0.0]).unwrap();
        assert!(b.is_zero());
        assert!(build_variation_vector(&f, &[0.0]).is_err());
    }

    #[test]
    fn input_marginals_resolution() {
        let f = res_feeder();
        let wind = Marginal::Weibull { shape: 7.41, scale: 2.06 };
        let ms = f.input_marginals(Some(&wind), None).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0], wind);
        assert_eq!(ms[1], Marginal::Normal { mean: 200.0, stdev: 10.0 });
        assert!(f.input_marginals(None, None).is_err());
        assert_eq!(f.input_classes(), vec![InputClass::Wind, InputClass::Load]);
    }

    #[test]
    fn thirteen_node_style_input_count() {
        // 8 single-phase loads + 2 wind + 2 solar = 12 random inputs
        let doc = crate::feeder::tests::feeder13_doc();
        let f = parse_feeder(&doc).unwrap();
        assert_eq!(f.input_count(), 12);
        assert_eq!(f.loads.len(), 8);
        assert_eq!(f.wind_units().count(), 2);
        assert_eq!(f.solar_units().count(), 2);
    }

    /// Shared by the cpf tests: a reduced 13-node-style document.
    pub(crate) fn feeder13_doc() -> String {
        std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/feeder13.json"
        ))
        .expect("bundled feeder document")
    }
}
