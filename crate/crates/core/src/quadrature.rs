//! Adaptive Simpson quadrature with interval bisection.
//!
//! The integrands in this crate are smooth and positive, so a Richardson-
//! corrected Simpson rule with a local error test is sufficient. The interval
//! is first cut into unit-length panels so that narrow peaks (for instance an
//! exponential kernel concentrated at the right end of a long interval) are
//! always seen by the initial sampling.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;
const MAX_PANELS: usize = 4096;

/// Integrates `f` over `[lo, hi]` to the requested relative accuracy.
pub fn integrate<F>(f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    const OP: &str = "quadrature::integrate";
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Quadrature {
            op: OP,
            lo,
            hi,
            msg: "non-finite bound".into(),
        });
    }
    if hi == lo {
        return Ok(0.0);
    }
    if hi < lo {
        return integrate(f, hi, lo, rel_tol).map(|v| -v);
    }

    let panels = ((hi - lo).ceil() as usize).clamp(1, MAX_PANELS);
    let width = (hi - lo) / panels as f64;
    let edges: Vec<f64> = (0..=panels)
        .map(|k| if k == panels { hi } else { lo + width * k as f64 })
        .collect();

    // Coarse pass fixes the absolute tolerance; a second pass runs only if the
    // refined value shows the coarse magnitude was badly off.
    let coarse: f64 = edges
        .windows(2)
        .map(|w| simpson(&f, w[0], w[1]).0)
        .sum();
    let mut abs_tol = rel_tol * coarse.abs();
    let mut value = 0.0;
    for _ in 0..2 {
        value = 0.0;
        for w in edges.windows(2) {
            let (s, fa, fm, fb) = simpson(&f, w[0], w[1]);
            let tol = abs_tol.max(f64::MIN_POSITIVE) * (w[1] - w[0]) / (hi - lo);
            value += refine(&f, w[0], w[1], fa, fm, fb, s, tol, MAX_DEPTH);
        }
        if !value.is_finite() {
            return Err(Error::Quadrature {
                op: OP,
                lo,
                hi,
                msg: "integrand produced a non-finite value".into(),
            });
        }
        let wanted = rel_tol * value.abs();
        if wanted >= 0.5 * abs_tol {
            break;
        }
        abs_tol = wanted;
    }
    Ok(value)
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fa, fm, fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
