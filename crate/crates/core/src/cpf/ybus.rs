//! Multi-phase bus admittance assembly.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::CpfError;
use crate::feeder::FeederModel;

/// Sparse per-phase-pair admittance structure plus the per-branch series
/// admittance blocks needed for current ratings.
#[derive(Debug, Clone)]
pub struct YBus {
    pub n: usize,
    /// Row-wise sparse storage: `rows[n]` holds `(column, y)` sorted by column.
    pub rows: Vec<Vec<(usize, Complex64)>>,
    /// Series admittance block of each branch over its phases.
    pub branch_y: Vec<DMatrix<Complex64>>,
}

impl YBus {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }
}

/// Builds the admittance structure: series blocks are the inverses of the
/// per-branch impedance matrices, taps enter as an ideal transformer on the
/// `from` side, branch charging splits half per end, and bus shunt
/// capacitors add to the diagonal.
pub fn assemble_ybus(feeder: &FeederModel) -> Result<YBus, CpfError> {
    let n = feeder.node_count();
    let mut dense: Vec<std::collections::BTreeMap<usize, Complex64>> = vec![Default::default(); n];
    let mut branch_y = Vec::with_capacity(feeder.branches.len());

    let mut stamp = |map: &mut Vec<std::collections::BTreeMap<usize, Complex64>>,
                     i: usize,
                     j: usize,
                     y: Complex64| {
        *map[i].entry(j).or_insert(Complex64::new(0.0, 0.0)) += y;
    };

    for br in &feeder.branches {
        let k = br.phases.len();
        let z = DMatrix::from_fn(k, k, |i, j| br.z_pu[i][j]);
        let ys = z.try_inverse().ok_or_else(|| CpfError::SingularBranch {
            from: feeder.buses[br.from].id.clone(),
            to: feeder.buses[br.to].id.clone(),
        })?;
        let t = br.tap;
        for (ip, &pi) in br.phases.iter().enumerate() {
            let fi = feeder.node_id(br.from, pi).expect("branch phase on from bus");
            let ti = feeder.node_id(br.to, pi).expect("branch phase on to bus");
            for (jp, &pj) in br.phases.iter().enumerate() {
                let fj = feeder.node_id(br.from, pj).expect("branch phase on from bus");
                let tj = feeder.node_id(br.to, pj).expect("branch phase on to bus");
                let y = ys[(ip, jp)];
                stamp(&mut dense, fi, fj, y / (t * t));
                stamp(&mut dense, fi, tj, -y / t);
                stamp(&mut dense, ti, fj, -y / t);
                stamp(&mut dense, ti, tj, y);
            }
            let half = Complex64::new(0.0, br.b_shunt_pu / 2.0);
            stamp(&mut dense, fi, fi, half / (t * t));
            stamp(&mut dense, ti, ti, half);
        }
        branch_y.push(ys);
    }

    for (bi, bus) in feeder.buses.iter().enumerate() {
        for &ph in &bus.phases {
            let b = bus.shunt_b[ph.index()];
            if b != 0.0 {
                let node = feeder.node_id(bi, ph).expect("bus phase node");
                stamp(&mut dense, node, node, Complex64::new(0.0, b));
            }
        }
    }

    let rows = dense
        .into_iter()
        .map(|m| m.into_iter().collect::<Vec<_>>())
        .collect();
    Ok(YBus { n, rows, branch_y })
}
