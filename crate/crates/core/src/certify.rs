//! Decay and ISS certificates for computed trajectories, and the empirical
//! rate fit of log‖X‖ against a quadratic in t.
//!
//! For ψ(t) = 1 + t and K·β > 1/2 the closed loop satisfies
//!
//!   V(t) ≤ e^{−ηt(t+2)/2}·V(0) + C·‖d‖∞² / ψ(t)²,   η = 2Kβ − 1,
//!
//! with C either (4/η)·r_{2/η,1} (when 2/η > 1) or C(η)/η, where
//! C(η) = sup_τ (2τ/η + 1)∫₀^τ e^{s−τ}(2s/η + 1)⁻¹ ds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{EvolutionProblem, Trajectory};
use crate::timescale::{lemma1_constant, lemma1_lhs, log_grid, PsiKind, TimeMap};

pub const TOL_BOUND: f64 = 1e-2;
/// Samples with ‖X‖_w at or below this value are excluded from rate fits.
pub const FIT_FLOOR: f64 = 1e-14;
pub const MIN_FIT_SAMPLES: usize = 10;
pub const SUP_SAFETY: f64 = 1.05;
pub const DEFAULT_TAU_MAX: f64 = 1e3;

const SUP_GRID_START: f64 = 1e-3;
const SUP_GRID_PER_DECADE: usize = 60;
const SUP_STABLE_REL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    DecayOnly,
    Iss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantRoute {
    /// (4/η)·r_{2/η,1}
    LemmaConstant,
    /// C(η)/η from the numerical supremum
    Supremum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub eta: f64,
    pub d_sup_norm: f64,
    pub constant_c: f64,
    pub constant_route: ConstantRoute,
    /// bound(t_k) − V(t_k) for every trajectory sample
    pub residuals: Vec<f64>,
    pub verdict: Verdict,
    /// min_k residual_k / bound(t_k)
    pub worst_margin: f64,
    pub tol_bound: f64,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// a in log‖X‖ ≈ −(a t² + b t) + c
    pub quad_coeff: f64,
    pub lin_coeff: f64,
    pub offset: f64,
    pub window: [f64; 2],
    pub residual_rms: f64,
    pub samples: usize,
}

/// e^{−φ(t)}·V0 + C·dSup²/ψ(t)²
pub fn decay_bound(map: &TimeMap, v0: f64, t: f64, d_sup: f64, c: f64) -> Result<f64> {
    const OP: &str = "certify::decay_bound";
    if map.eta.is_nan() || map.eta <= 0.0 {
        return Err(Error::precondition(OP, format!("eta must be positive, got {}", map.eta)));
    }
    if !(v0 >= 0.0 && d_sup >= 0.0 && c >= 0.0) {
        return Err(Error::domain(OP, "V0, dSup and C must be nonnegative"));
    }
    let psi = map.schedule.eval(t)?;
    Ok((-map.phi(t)?).exp() * v0 + c * d_sup * d_sup / (psi * psi))
}

/// The ISS constant for the affine schedule. Uses (4/η)·r_{2/η,1} when
/// η < 2 and C(η)/η otherwise.
pub fn theorem2_constant(eta: f64) -> Result<f64> {
    Ok(constant_for(eta)?.0)
}

fn constant_for(eta: f64) -> Result<(f64, ConstantRoute)> {
    const OP: &str = "certify::theorem2_constant";
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::precondition(OP, format!("eta must be positive, got {eta}")));
    }
    if eta < 2.0 {
        Ok(((4.0 / eta) * lemma1_constant(2.0 / eta, 1.0)?, ConstantRoute::LemmaConstant))
    } else {
        Ok((theorem3_constant(eta, DEFAULT_TAU_MAX)? / eta, ConstantRoute::Supremum))
    }
}

/// (2τ/η + 1)∫₀^τ e^{s−τ}(2s/η + 1)⁻¹ ds
pub fn theorem3_integrand(eta: f64, tau: f64) -> Result<f64> {
    let a = 2.0 / eta;
    Ok((a * tau + 1.0) * lemma1_lhs(a, 1.0, tau)?)
}

/// Upper estimate of C(η): the maximum over a log-spaced τ grid up to
/// `tau_max`, scaled by [`SUP_SAFETY`]. Fails if the running maximum still
/// moves by 1% or more over the last two decades of the grid.
pub fn theorem3_constant(eta: f64, tau_max: f64) -> Result<f64> {
    const OP: &str = "certify::theorem3_constant";
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::precondition(OP, format!("eta must be positive, got {eta}")));
    }
    if !(tau_max > 100.0 * SUP_GRID_START && tau_max.is_finite()) {
        return Err(Error::precondition(
            OP,
            format!("tau_max must exceed {}, got {tau_max}", 100.0 * SUP_GRID_START),
        ));
    }
    let decades = (tau_max / SUP_GRID_START).log10();
    let count = (decades * SUP_GRID_PER_DECADE as f64).ceil() as usize + 1;
    let grid = log_grid(SUP_GRID_START, tau_max, count);
    let cutoff = tau_max / 100.0;
    let (mut early, mut overall) = (0.0f64, 0.0f64);
    for &tau in &grid {
        let v = theorem3_integrand(eta, tau)?;
        overall = overall.max(v);
        if tau <= cutoff {
            early = early.max(v);
        }
    }
    if overall > early * (1.0 + SUP_STABLE_REL) {
        return Err(Error::NotStabilized {
            op: OP,
            msg: format!(
                "running max grew by a factor {:.4} over the last two decades below tau_max = {tau_max}",
                overall / early
            ),
        });
    }
    Ok(SUP_SAFETY * overall)
}

/// Checks every sample of a certified affine-schedule run against the bound.
pub fn audit_trajectory(traj: &Trajectory, problem: &EvolutionProblem) -> Result<Certificate> {
    audit_with_tolerance(traj, problem, TOL_BOUND)
}

pub fn audit_with_tolerance(traj: &Trajectory, problem: &EvolutionProblem, tol_bound: f64) -> Result<Certificate> {
    const OP: &str = "certify::audit_trajectory";
    let gain = problem.gain_condition();
    if !gain.satisfied || !traj.meta.certified {
        return Err(Error::Uncertified {
            op: OP,
            msg: format!(
                "gain condition K*beta > 1/2 fails (K = {}, beta = {}); no certificate is issued",
                problem.gain, gain.beta
            ),
        });
    }
    if !matches!(problem.schedule.kind, PsiKind::Affine) {
        return Err(Error::precondition(OP, "the bound is stated for the affine schedule psi(t) = 1 + t"));
    }
    if traj.is_empty() {
        return Err(Error::InsufficientSamples {
            op: OP,
            msg: "empty trajectory".into(),
        });
    }
    let (c, route) = constant_for(gain.eta)?;
    let d_sup = problem.disturbance_sup_norm();
    let map = TimeMap::new(gain.eta, crate::timescale::PsiSchedule::affine(1)?)?;
    let v0 = problem.inner().norm_squared(&problem.initial_state);

    let mut residuals = Vec::with_capacity(traj.len());
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for (&t, &v) in traj.times.iter().zip(&traj.lyapunov) {
        let bound = decay_bound(&map, v0, t, d_sup, c)?;
        let r = bound - v;
        if r < -tol_bound * bound {
            pass = false;
        }
        worst = worst.min(if bound > 0.0 { r / bound } else if r >= 0.0 { 0.0 } else { f64::NEG_INFINITY });
        residuals.push(r);
    }
    Ok(Certificate {
        kind: if d_sup > 0.0 {
            CertificateKind::Iss
        } else {
            CertificateKind::DecayOnly
        },
        eta: gain.eta,
        d_sup_norm: d_sup,
        constant_c: c,
        constant_route: route,
        residuals,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        worst_margin: worst,
        tol_bound,
    })
}

/// Largest V(t)·ψ(t)²/‖d‖∞² over samples with t in [from, to].
pub fn iss_tail_ratio(traj: &Trajectory, problem: &EvolutionProblem, from: f64, to: f64) -> Result<f64> {
    const OP: &str = "certify::iss_tail_ratio";
    let d_sup = problem.disturbance_sup_norm();
    if d_sup <= 0.0 {
        return Err(Error::precondition(OP, "disturbance is zero"));
    }
    let mut worst = f64::NEG_INFINITY;
    for (&t, &v) in traj.times.iter().zip(&traj.lyapunov) {
        if t >= from && t <= to {
            let psi = problem.schedule.eval(t)?;
            worst = worst.max(v * psi * psi / (d_sup * d_sup));
        }
    }
    if worst == f64::NEG_INFINITY {
        return Err(Error::InsufficientSamples {
            op: OP,
            msg: format!("no samples in [{from}, {to}]"),
        });
    }
    Ok(worst)
}

/// Default fit window [0.1·T, T] for a trajectory ending at T.
pub fn default_window(traj: &Trajectory) -> [f64; 2] {
    let end = traj.times.last().copied().unwrap_or(0.0);
    [0.1 * end, end]
}

/// Least squares of log‖X(t_k)‖_w on {t_k², t_k, 1} over the window.
pub fn fit_rate(traj: &Trajectory, window: [f64; 2]) -> Result<RateFit> {
    const OP: &str = "certify::fit_rate";
    let [lo, hi] = window;
    if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::domain(OP, format!("bad window [{lo}, {hi}]")));
    }
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(traj.norms())
        .filter(|(t, n)| **t >= lo && **t <= hi && *n > FIT_FLOOR)
        .map(|(t, n)| (*t, n.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            op: OP,
            msg: format!(
                "{} samples above the floor {FIT_FLOOR} in [{lo}, {hi}], need {MIN_FIT_SAMPLES}",
                pts.len()
            ),
        });
    }
    // centre and scale t so the normal matrix stays well conditioned
    let mid = 0.5 * (lo + hi);
    let half = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let design = DMatrix::from_fn(pts.len(), 3, |i, j| {
        let s = (pts[i].0 - mid) / half;
        s.powi(2 - j as i32)
    });
    let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::precondition(OP, e.to_string()))?;
    let resid = &design * &coef - &rhs;
    let residual_rms = (resid.norm_squared() / pts.len() as f64).sqrt();

    // back to log‖X‖ = p t² + q t + r in unscaled t
    let (c2, c1, c0) = (coef[0] / (half * half), coef[1] / half, coef[2]);
    let p = c2;
    let q = c1 - 2.0 * c2 * mid;
    let r = c2 * mid * mid - c1 * mid + c0;
    Ok(RateFit {
        quad_coeff: -p,
        lin_coeff: -q,
        offset: r,
        window,
        residual_rms,
        samples: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{simulate, SimOptions, TrajectoryMeta};
    use crate::timescale::PsiSchedule;
    use approx::assert_relative_eq;

    fn affine_map(eta: f64) -> TimeMap {
        TimeMap::new(eta, PsiSchedule::affine(1).unwrap()).unwrap()
    }

    fn synthetic(times: Vec<f64>, norm: impl Fn(f64) -> f64) -> Trajectory {
        let inner = crate::operators::InnerProduct::uniform(1, 1.0).unwrap();
        let states: Vec<_> = times.iter().map(|t| DVector::from_element(1, norm(*t))).collect();
        Trajectory {
            lyapunov: states.iter().map(|s| s[0] * s[0]).collect(),
            control_magnitudes: vec![0.0; times.len()],
            times,
            states,
            inner,
            meta: TrajectoryMeta {
                scheme: "synthetic".into(),
                steps: 0,
                rejected_steps: 0,
                certified: true,
                dt_min: 0.0,
                dt_max: 0.0,
                max_step_growth: 0.0,
                contraction_violations: 0,
            },
        }
    }

    #[test]
    fn bound_at_origin_and_decay_example() {
        let m = affine_map(1.0);
        assert_relative_eq!(decay_bound(&m, 2.0, 0.0, 0.3, 5.0).unwrap(), 2.0 + 5.0 * 0.09);
        assert_relative_eq!(decay_bound(&m, 1.0, 2.0, 0.0, 7.0).unwrap(), (-4.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn lemma_route_values() {
        assert_relative_eq!(theorem2_constant(1.0).unwrap(), 4.0 * 4.120280728896106, max_relative = 1e-8);
        assert_relative_eq!(theorem2_constant(0.5).unwrap(), 8.0 * 6.173264417410964, max_relative = 1e-8);
        assert_eq!(constant_for(2.0).unwrap().1, ConstantRoute::Supremum);
        assert!(theorem2_constant(0.0).is_err());
    }

    #[test]
    fn supremum_is_finite_and_below_lemma_route() {
        let c1 = theorem3_constant(1.0, 1e3).unwrap();
        assert!(c1 > 1.4 && c1 < 1.6, "{c1}");
        // the Lemma constant bounds the same supremum from above
        assert!(theorem2_constant(1.0).unwrap() >= c1 / 1.0);
        assert_eq!(theorem3_integrand(1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn scalar_run_passes_with_margin() {
        let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 2.0).unwrap();
        let traj = simulate(&p, &SimOptions::default()).unwrap();
        let cert = audit_trajectory(&traj, &p).unwrap();
        assert!(cert.passed());
        assert_eq!(cert.kind, CertificateKind::DecayOnly);
        assert_eq!(cert.eta, 1.0);
        assert!(cert.worst_margin >= 0.0);
    }

    #[test]
    fn uncertified_is_refused() {
        let p = EvolutionProblem::scalar(0.0, 1.0, 0.4, PsiSchedule::affine(1).unwrap(), 1.0, 1.0).unwrap();
        let opts = SimOptions {
            allow_uncertified: true,
            ..SimOptions::default()
        };
        let traj = simulate(&p, &opts).unwrap();
        assert!(matches!(audit_trajectory(&traj, &p), Err(Error::Uncertified { .. })));
    }

    #[test]
    fn violation_detected() {
        let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 2.0).unwrap();
        let traj = synthetic(vec![0.0, 1.0, 2.0], |_| 1.0);
        let cert = audit_trajectory(&traj, &p).unwrap();
        assert_eq!(cert.verdict, Verdict::Fail);
        assert!(cert.worst_margin < -0.5);
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let times: Vec<f64> = (0..=200).map(|k| 3.0 * k as f64 / 200.0).collect();
        let traj = synthetic(times, |t| (-(0.7 * t * t + 0.2 * t) + 0.3).exp());
        let fit = fit_rate(&traj, [0.3, 3.0]).unwrap();
        assert_relative_eq!(fit.quad_coeff, 0.7, epsilon = 1e-9);
        assert_relative_eq!(fit.lin_coeff, 0.2, epsilon = 1e-9);
        assert_relative_eq!(fit.offset, 0.3, epsilon = 1e-9);
        assert!(fit.residual_rms < 1e-10);
    }

    #[test]
    fn fit_needs_samples_above_floor() {
        let times: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let traj = synthetic(times, |_| 0.0);
        assert!(matches!(
            fit_rate(&traj, [0.0, 49.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
