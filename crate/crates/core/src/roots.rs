//! Scalar root-finding helpers shared by the distribution and Nataf layers.

/// Brent's method on a bracketing interval `[a, b]` with `f(a)·f(b) ≤ 0`.
///
/// Returns the abscissa where `|f|` is tolerably small or the bracket has
/// shrunk below `xtol`. `None` if the interval does not bracket a root.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa * fb > 0.0 {
        return None;
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..max_iter {
        if fb.abs() <= ftol || (b - a).abs() <= xtol {
            return Some(b);
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !((lo.min(b) < s && s < lo.max(b))
            && (!mflag || (s - b).abs() < (b - c).abs() / 2.0)
            && (mflag || (s - b).abs() < (c - d).abs() / 2.0));
        if cond {
            s = (a + b) / 2.0;
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Some(b)
}

/// Polishes an approximate quantile `x0` of a CDF by safeguarded Newton steps.
///
/// `cdf` must be nondecreasing on `[lo, hi]` and `pdf` its derivative. The
/// iteration keeps a shrinking bracket so a bad Newton step can never escape;
/// it stops once `|cdf(x) − p| ≤ ftol`.
pub fn refine_quantile<C, D>(cdf: C, pdf: D, p: f64, x0: f64, lo: f64, hi: f64, ftol: f64) -> f64
where
    C: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = x0.clamp(lo, hi);
    let mut blo = lo;
    let mut bhi = hi;
    for _ in 0..64 {
        let e = cdf(x) - p;
        if e.abs() <= ftol {
            return x;
        }
        if e > 0.0 {
            bhi = bhi.min(x);
        } else {
            blo = blo.max(x);
        }
        let slope = pdf(x);
        let newton = if slope > 0.0 { x - e / slope } else { f64::NAN };
        x = if newton.is_finite() && newton > blo && newton < bhi {
            newton
        } else {
            // fall back to bisection on the live bracket
            let mid = 0.5 * (blo + bhi);
            if !mid.is_finite() || mid <= blo || mid >= bhi {
                return x;
            }
            mid
        };
    }
    x
}

/// Splitmix64 scrambling; used to derive independent seed streams from a
/// master seed without coupling to any RNG implementation details.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
