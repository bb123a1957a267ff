//! Hyperbolic (q-norm) truncated multi-index sets.

use super::MultiIndex;

/// All multi-indices with `(Σ a_i^q)^{1/q} ≤ p` and at most `max_interaction`
/// nonzero components, sorted by total degree then reverse-lexicographically
/// (dimension 1 terms first within a degree group).
///
/// `q = 1` with `max_interaction = n` reproduces the plain total-degree set.
pub fn build_index_set(n: usize, p: usize, q: f64, max_interaction: usize) -> Vec<MultiIndex> {
    assert!(n >= 1, "dimension must be positive");
    assert!(q > 0.0 && q <= 1.0, "q must lie in (0, 1]");
    let r = max_interaction.clamp(1, n);
    let budget = (p as f64).powf(q) + 1e-9;
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    recurse(n, p as u32, q, r, budget, 0, 0.0, 0, &mut cur, &mut out);
    out.sort_by(|a, b| {
        a.total_degree()
            .cmp(&b.total_degree())
            .then_with(|| b.0.cmp(&a.0))
    });
    out
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    n: usize,
    p: u32,
    q: f64,
    r: usize,
    budget: f64,
    dim: usize,
    used: f64,
    nonzero: usize,
    cur: &mut Vec<u32>,
    out: &mut Vec<MultiIndex>,
) {
    if dim == n {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for a in 0..=p {
        let cost = if a == 0 { 0.0 } else { (a as f64).powf(q) };
        let nz = nonzero + usize::from(a > 0);
        if used + cost > budget || nz > r {
            break;
        }
        cur[dim] = a;
        recurse(n, p, q, r, budget, dim + 1, used + cost, nz, cur, out);
    }
    cur[dim] = 0;
}
