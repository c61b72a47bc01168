//! Gain schedules ψ, the clock change τ = φ(t) = η∫₀ᵗψ, and the integral
//! inequality constant r_{a,α} used to bound the disturbance response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Multiplicative slack on the right-hand side of the integral inequality.
/// The inequality is exact; the slack only absorbs quadrature error.
pub const LEMMA_SLACK: f64 = 1e-6;

const PHI_REL_TOL: f64 = 1e-12;
const LEMMA_REL_TOL: f64 = 1e-10;

/// Shape of the growing gain ψ(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiKind {
    /// ψ(t) = 1 + t
    Affine,
    /// ψ(t) = a·e^{αt}
    Exponential { a: f64, alpha: f64 },
    /// ψ(t) = b·tᵗ, continued to ψ(0) = b.
    ///
    /// Note that tᵗ dips to e^{-1/e} at t = 1/e before growing, so this
    /// schedule is only increasing on [1/e, ∞).
    PowerTower { b: f64 },
    /// ψ(t) ≡ c. Not a hyperexponential schedule; it exists as the
    /// constant-gain baseline that rate fits are compared against.
    Constant { c: f64 },
}

/// The gain profile ψ(t)ⁿ applied by the feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSchedule {
    #[serde(flatten)]
    pub kind: PsiKind,
    pub exponent: u32,
}

impl PsiSchedule {
    pub fn new(kind: PsiKind, exponent: u32) -> Result<Self> {
        const OP: &str = "timescale::PsiSchedule::new";
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::precondition(OP, format!("{name} must be positive, got {v}")))
            }
        };
        match kind {
            PsiKind::Affine => {}
            PsiKind::Exponential { a, alpha } => {
                positive("a", a)?;
                positive("alpha", alpha)?;
            }
            PsiKind::PowerTower { b } => positive("b", b)?,
            PsiKind::Constant { c } => positive("c", c)?,
        }
        if exponent == 0 {
            return Err(Error::precondition(OP, "exponent n must be at least 1"));
        }
        Ok(Self { kind, exponent })
    }

    pub fn affine(exponent: u32) -> Result<Self> {
        Self::new(PsiKind::Affine, exponent)
    }

    /// ψ(t).
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(
                "timescale::psi_eval",
                format!("t must be finite and nonnegative, got {t}"),
            ));
        }
        Ok(self.eval_unchecked(t))
    }

    /// ψ(t)ⁿ.
    pub fn gain_profile(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.powi(self.exponent as i32))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            PsiKind::Affine => 1.0 + t,
            PsiKind::Exponential { a, alpha } => a * (alpha * t).exp(),
            PsiKind::PowerTower { b } => {
                if t == 0.0 {
                    b
                } else {
                    b * (t * t.ln()).exp()
                }
            }
            PsiKind::Constant { c } => c,
        }
    }

    pub(crate) fn gain_profile_unchecked(&self, t: f64) -> f64 {
        self.eval_unchecked(t).powi(self.exponent as i32)
    }

    /// ∫ₗₒʰⁱ ψ(s) ds.
    fn integral(&self, lo: f64, hi: f64) -> Result<f64> {
        match self.kind {
            PsiKind::Affine => Ok((hi - lo) * (1.0 + 0.5 * (hi + lo))),
            PsiKind::Constant { c } => Ok(c * (hi - lo)),
            _ => quadrature::integrate(|s| self.eval_unchecked(s), lo, hi, PHI_REL_TOL),
        }
    }
}

/// The clock change τ = φ(t) = η∫₀ᵗψ(s)ds that turns the time-varying decay
/// into unit-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub eta: f64,
    pub schedule: PsiSchedule,
}

impl TimeMap {
    pub fn new(eta: f64, schedule: PsiSchedule) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::precondition(
                "timescale::TimeMap::new",
                format!("decay margin eta must be positive, got {eta}"),
            ));
        }
        Ok(Self { eta, schedule })
    }

    pub fn phi(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(
                "timescale::phi",
                format!("t must be finite and nonnegative, got {t}"),
            ));
        }
        match self.schedule.kind {
            PsiKind::Affine => Ok(self.eta * t * (t + 2.0) / 2.0),
            _ => Ok(self.eta * self.schedule.integral(0.0, t)?),
        }
    }

    pub fn phi_inverse(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::domain(
                "timescale::phi_inverse",
                format!("tau must be finite and nonnegative, got {tau}"),
            ));
        }
        match self.schedule.kind {
            PsiKind::Affine => {
                // √(1+x) − 1 written without cancellation
                let x = 2.0 * tau / self.eta;
                Ok(x / ((1.0 + x).sqrt() + 1.0))
            }
            PsiKind::Constant { c } => Ok(tau / (self.eta * c)),
            _ => self.invert_by_bisection(tau),
        }
    }

    fn invert_by_bisection(&self, tau: f64) -> Result<f64> {
        const OP: &str = "timescale::phi_inverse";
        if tau == 0.0 {
            return Ok(0.0);
        }
        let tol = 1e-10 * tau.max(1.0);

        // bracket [lo, hi] with φ(lo) ≤ τ ≤ φ(hi); φ(lo) is carried along so
        // every probe integrates only over [lo, mid]
        let (mut lo, mut phi_lo) = (0.0, 0.0);
        let mut hi = 1.0;
        let mut phi_hi = self.phi(hi)?;
        while phi_hi < tau {
            lo = hi;
            phi_lo = phi_hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::domain(OP, format!("tau = {tau} is out of reach")));
            }
            phi_hi = phi_lo + self.eta * self.schedule.integral(lo, hi)?;
        }
        if (phi_hi - tau).abs() <= tol {
            return Ok(hi);
        }

        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let phi_mid = phi_lo + self.eta * self.schedule.integral(lo, mid)?;
            if (phi_mid - tau).abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(mid);
            }
            if phi_mid < tau {
                lo = mid;
                phi_lo = phi_mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_lemma_params(op: &'static str, a: f64, alpha: f64) -> Result<()> {
    if !(a.is_finite() && a > 0.0 && alpha.is_finite() && alpha > 0.0) {
        return Err(Error::precondition(
            op,
            format!("a and alpha must be positive, got a = {a}, alpha = {alpha}"),
        ));
    }
    if a * alpha <= 1.0 {
        return Err(Error::precondition(
            op,
            format!("requires alpha*a > 1, got alpha*a = {}", a * alpha),
        ));
    }
    Ok(())
}

/// ∫₀^τ e^{s−τ}(as+1)^{−α} ds
pub fn lemma1_lhs(a: f64, alpha: f64, tau: f64) -> Result<f64> {
    quadrature::integrate(
        |s| (s - tau).exp() * (a * s + 1.0).powf(-alpha),
        0.0,
        tau,
        LEMMA_REL_TOL,
    )
}

/// The constant r_{a,α} bounding ∫₀^τ e^{s−τ}(as+1)^{−α} ds by
/// r_{a,α}(aτ+1)^{−α} for all τ ≥ 0. Requires αa > 1.
pub fn lemma1_constant(a: f64, alpha: f64) -> Result<f64> {
    check_lemma_params("timescale::lemma1_constant", a, alpha)?;
    let a_alpha = a * alpha;
    let knee = (a_alpha - 1.0) / a;
    let head = a_alpha.powf(alpha) * lemma1_lhs(a, alpha, knee)?;
    let middle = a_alpha + 1.0;
    let tail = ((a_alpha + 1.0) / a_alpha).powf(alpha) * -(-1.0 / a).exp_m1();
    Ok(head + middle + tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// rhs − lhs
    pub margin: f64,
    /// (rhs − lhs) / rhs
    pub relative_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub a: f64,
    pub alpha: f64,
    pub constant: f64,
    pub rows: Vec<LemmaRow>,
    pub violations: usize,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.violations == 0
    }

    pub fn worst_relative_margin(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.relative_margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates both sides of the integral inequality on every grid point.
/// Violations are reported in the rows, never raised.
pub fn lemma1_check(a: f64, alpha: f64, tau_grid: &[f64]) -> Result<LemmaReport> {
    const OP: &str = "timescale::lemma1_check";
    check_lemma_params(OP, a, alpha)?;
    if let Some(bad) = tau_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::domain(OP, format!("grid value {bad} is not a finite nonnegative real")));
    }
    let constant = lemma1_constant(a, alpha)?;
    let rows = tau_grid
        .iter()
        .map(|&tau| {
            let lhs = lemma1_lhs(a, alpha, tau)?;
            let rhs = constant * (a * tau + 1.0).powf(-alpha);
            Ok(LemmaRow {
                tau,
                lhs,
                rhs,
                margin: rhs - lhs,
                relative_margin: (rhs - lhs) / rhs,
                pass: lhs <= rhs * (1.0 + LEMMA_SLACK),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = rows.iter().filter(|r| !r.pass).count();
    Ok(LemmaReport {
        a,
        alpha,
        constant,
        rows,
        violations,
    })
}

/// `count` points spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (l0, l1) = (lo.log10(), hi.log10());
            (0..count)
                .map(|k| {
                    if k + 1 == count {
                        hi
                    } else {
                        10f64.powf(l0 + (l1 - l0) * k as f64 / (count - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn affine_map(eta: f64) -> TimeMap {
        TimeMap::new(eta, PsiSchedule::affine(1).unwrap()).unwrap()
    }

    #[test]
    fn psi_values() {
        let aff = PsiSchedule::affine(1).unwrap();
        assert_eq!(aff.eval(0.0).unwrap(), 1.0);
        assert_eq!(aff.eval(3.0).unwrap(), 4.0);
        let exp = PsiSchedule::new(PsiKind::Exponential { a: 2.0, alpha: 1.0 }, 1).unwrap();
        assert_eq!(exp.eval(0.0).unwrap(), 2.0);
        let tower = PsiSchedule::new(PsiKind::PowerTower { b: 3.0 }, 1).unwrap();
        assert_eq!(tower.eval(0.0).unwrap(), 3.0);
        assert_relative_eq!(tower.eval(2.0).unwrap(), 12.0, max_relative = 1e-14);
    }

    #[test]
    fn psi_rejects_negative_time() {
        let aff = PsiSchedule::affine(2).unwrap();
        assert!(matches!(aff.eval(-1e-3), Err(Error::Domain { .. })));
        assert!(aff.eval(f64::NAN).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(PsiSchedule::affine(0).is_err());
        assert!(PsiSchedule::new(PsiKind::Exponential { a: 0.0, alpha: 1.0 }, 1).is_err());
        assert!(PsiSchedule::new(PsiKind::PowerTower { b: -1.0 }, 1).is_err());
    }

    #[test]
    fn gain_profile_applies_exponent() {
        let s = PsiSchedule::affine(3).unwrap();
        assert_eq!(s.gain_profile(1.0).unwrap(), 8.0);
    }

    #[test]
    fn phi_affine_examples() {
        assert_eq!(affine_map(1.0).phi(2.0).unwrap(), 4.0);
        assert_eq!(affine_map(3.0).phi(1.0).unwrap(), 4.5);
        assert_eq!(affine_map(1.0).phi(0.0).unwrap(), 0.0);
        assert!(affine_map(1.0).phi(-1.0).is_err());
    }

    #[test]
    fn phi_zero_for_all_kinds() {
        for kind in [
            PsiKind::Affine,
            PsiKind::Exponential { a: 0.5, alpha: 2.0 },
            PsiKind::PowerTower { b: 1.0 },
            PsiKind::Constant { c: 2.0 },
        ] {
            let map = TimeMap::new(1.5, PsiSchedule::new(kind, 1).unwrap()).unwrap();
            assert_eq!(map.phi(0.0).unwrap(), 0.0);
            assert_eq!(map.phi_inverse(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn phi_inverse_affine_examples() {
        assert_relative_eq!(affine_map(1.0).phi_inverse(4.0).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(affine_map(2.0).phi_inverse(8.0).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn phi_exponential_matches_closed_form() {
        let (a, alpha, eta) = (2.0, 0.7, 1.3);
        let map =
            TimeMap::new(eta, PsiSchedule::new(PsiKind::Exponential { a, alpha }, 1).unwrap())
                .unwrap();
        for t in [0.1, 1.0, 7.5, 30.0] {
            let exact = eta * a * (alpha * t).exp_m1() / alpha;
            assert_relative_eq!(map.phi(t).unwrap(), exact, max_relative = 1e-10);
        }
    }

    #[test]
    fn lemma_constant_reference_values() {
        // composite-quadrature reference (see tests/oracles.rs for the oracle)
        let r = lemma1_constant(2.0, 1.0).unwrap();
        assert_relative_eq!(r, 4.120280728896106, max_relative = 1e-9);
        assert!(r >= 3.0);
        assert!(lemma1_constant(10.0, 1.0).unwrap() > 11.0);
    }

    #[test]
    fn lemma_precondition() {
        assert!(matches!(lemma1_constant(10.0, 0.05), Err(Error::Precondition { .. })));
        assert!(lemma1_constant(1.0, 1.0).is_err());
        assert!(lemma1_check(0.5, 2.0, &[1.0]).is_err());
    }

    #[test]
    fn lemma_check_tau_zero() {
        let rep = lemma1_check(2.0, 1.0, &[0.0]).unwrap();
        assert_eq!(rep.rows[0].lhs, 0.0);
        assert!(rep.rows[0].rhs > 0.0);
        assert!(rep.all_pass());
    }

    #[test]
    fn lemma_check_rejects_negative_grid() {
        assert!(lemma1_check(2.0, 1.0, &[1.0, -0.5]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-2, 1e3, 40);
        assert_eq!(g.len(), 40);
        assert_relative_eq!(g[0], 1e-2, max_relative = 1e-14);
        assert_eq!(*g.last().unwrap(), 1e3);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
