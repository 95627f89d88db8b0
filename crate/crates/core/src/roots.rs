//! Scalar root bracketing used by the closed-form radius computations.

/// Bisects `f` on `[lo, hi]` until the bracket is narrower than `tol`.
///
/// The caller guarantees `f(lo)` and `f(hi)` have opposite signs (or one is
/// zero). Returns the midpoint of the final bracket.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Newton polishing that never leaves `[lo, hi]` and never increases `|f|`.
pub(crate) fn polish<F, D>(f: F, df: D, mut x: f64, lo: f64, hi: f64, steps: usize) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    for _ in 0..steps {
        let fx = f(x);
        let d = df(x);
        if fx == 0.0 || d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - fx / d;
        if !(lo..=hi).contains(&next) || f(next).abs() > fx.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Locates the first sign change of `f` on a uniform scan of `[lo, hi]` and
/// returns the sub-bracket containing it.
pub(crate) fn first_crossing<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Option<(f64, f64)> {
    let h = (hi - lo) / samples as f64;
    let mut x0 = lo;
    let mut f0 = f(x0);
    for i in 1..=samples {
        let x1 = if i == samples { hi } else { lo + i as f64 * h };
        let f1 = f(x1);
        if f0 == 0.0 || (f0 < 0.0) != (f1 < 0.0) {
            return Some((x0, x1));
        }
        x0 = x1;
        f0 = f1;
    }
    None
}
