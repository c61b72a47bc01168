//! Time integration of the closed loop Ẋ + AX + Kψ(t)ⁿBX = d(t)·p.
//!
//! Backward Euler is the default: each step applies the resolvent
//! (I + dt·G(t+dt))⁻¹ of the monotone closed-loop generator G, which is a
//! contraction in the weighted norm. Crank–Nicolson is available for
//! accuracy studies but carries no contraction guarantee here.
//!
//! The step size follows the gain: dt_k = min(dt_max, c_dt / ψ(t_k)ⁿ).

mod banded;
mod disturbance;
mod picard;
mod trajectory;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{coercivity_constant, DiscreteOperator, InnerProduct};
use crate::timescale::PsiSchedule;

use banded::{band_lu_solve, BandLayout};
pub use disturbance::{DisturbanceKind, DisturbanceSampler, DisturbanceSpec, SpatialPattern};
pub use picard::{picard_mild_solution, PicardSolution, SubintervalReport, PICARD_TOL};
pub use trajectory::{Trajectory, TrajectoryMeta};

/// Relative round-off allowance for the per-step contraction check.
pub const CONTRACTION_TOL: f64 = 1e-12;

/// The closed-loop problem Ẋ + AX + Kψ(t)ⁿBX = d(t)·p, X(0) = X₀ on [0, T].
#[derive(Debug, Clone)]
pub struct EvolutionProblem {
    pub a: DiscreteOperator,
    pub b: DiscreteOperator,
    pub gain: f64,
    pub schedule: PsiSchedule,
    pub disturbance: DisturbanceSpec,
    pub initial_state: DVector<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCondition {
    pub satisfied: bool,
    /// η = 2Kβ − 1
    pub eta: f64,
    /// coercivity constant of B
    pub beta: f64,
}

impl EvolutionProblem {
    /// One-dimensional problem ẋ + a·x + Kψ(t)ⁿ·b·x = d(t) with unit weight.
    pub fn scalar(a: f64, b: f64, gain: f64, schedule: PsiSchedule, x0: f64, horizon: f64) -> Result<Self> {
        let inner = InnerProduct::uniform(1, 1.0)?;
        let op = |v: f64, label: &str| {
            DiscreteOperator::new(nalgebra::DMatrix::from_element(1, 1, v), inner.clone(), label)
        };
        let p = Self {
            a: op(a, "scalar_a")?,
            b: op(b, "scalar_b")?,
            gain,
            schedule,
            disturbance: DisturbanceSpec::zero(),
            initial_state: DVector::from_element(1, x0),
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn inner(&self) -> &InnerProduct {
        self.a.inner()
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "solver::EvolutionProblem";
        let m = self.a.dim();
        if self.b.dim() != m || self.initial_state.len() != m {
            return Err(Error::dimension(
                OP,
                format!(
                    "A is {m}x{m}, B is {0}x{0}, initial state has {1} entries",
                    self.b.dim(),
                    self.initial_state.len()
                ),
            ));
        }
        if self.a.inner() != self.b.inner() {
            return Err(Error::dimension(OP, "A and B are measured in different inner products"));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::precondition(OP, format!("gain must be nonnegative, got {}", self.gain)));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) || !self.disturbance.is_finite() {
            return Err(Error::precondition(OP, "non-finite initial state or disturbance"));
        }
        Ok(())
    }

    /// The spatial pattern p of the disturbance.
    pub fn disturbance_pattern(&self) -> DVector<f64> {
        self.disturbance.pattern_vector(self.dim(), self.a.blocks())
    }

    /// ‖d‖∞ measured in the state norm: sup|d(t)|·‖p‖_w.
    pub fn disturbance_sup_norm(&self) -> f64 {
        self.disturbance.sup_norm() * self.inner().norm(&self.disturbance_pattern())
    }

    pub fn gain_condition(&self) -> GainCondition {
        gain_condition(self)
    }
}

/// Compares K·β against 1/2 where β is the coercivity constant of B.
pub fn gain_condition(problem: &EvolutionProblem) -> GainCondition {
    let beta = coercivity_constant(&problem.b);
    let kb = problem.gain * beta;
    GainCondition {
        satisfied: kb > 0.5,
        eta: 2.0 * kb - 1.0,
        beta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[serde(alias = "be")]
    BackwardEuler,
    #[serde(alias = "cn")]
    CrankNicolson,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::BackwardEuler => "backward_euler",
            Scheme::CrankNicolson => "crank_nicolson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DtPolicy {
    /// dt = min(dt_max, c_dt / ψ(t)ⁿ)
    GainAdaptive { c_dt: f64 },
    /// dt = dt_max
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub scheme: Scheme,
    /// Defaults to 10⁻³·max(1, T).
    pub dt_max: Option<f64>,
    pub dt_policy: DtPolicy,
    /// Record only at multiples of this interval (steps are shortened to
    /// land on them); `None` records every step.
    pub sample_interval: Option<f64>,
    pub allow_uncertified: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::BackwardEuler,
            dt_max: None,
            dt_policy: DtPolicy::GainAdaptive { c_dt: 0.1 },
            sample_interval: None,
            allow_uncertified: false,
        }
    }
}

impl SimOptions {
    pub fn resolved_dt_max(&self, horizon: f64) -> f64 {
        self.dt_max.unwrap_or(1e-3 * horizon.max(1.0))
    }
}

/// Band-factorized implicit stepper, reused across steps of one run.
struct Stepper<'a> {
    problem: &'a EvolutionProblem,
    layout: BandLayout,
    band_a: Vec<f64>,
    band_b: Vec<f64>,
    pattern: DVector<f64>,
    work: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a EvolutionProblem) -> Self {
        let layout = BandLayout::choose(&[problem.a.matrix(), problem.b.matrix()], problem.a.blocks());
        let m = problem.dim();
        Self {
            band_a: layout.extract(problem.a.matrix()),
            band_b: layout.extract(problem.b.matrix()),
            work: Vec::with_capacity(m * layout.width()),
            layout,
            problem,
            pattern: problem.disturbance_pattern(),
            rhs: vec![0.0; m],
        }
    }

    fn feedback(&self, t: f64) -> f64 {
        self.problem.gain * self.problem.schedule.gain_profile_unchecked(t)
    }

    /// Solves (I + c_a·A + c_b·B) y = r.
    fn solve(&mut self, c_a: f64, c_b: f64, r: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.layout.width();
        let lower = self.layout.lower;
        self.work.clear();
        self.work
            .extend(self.band_a.iter().zip(&self.band_b).map(|(a, b)| c_a * a + c_b * b));
        for i in 0..self.layout.dim() {
            self.work[i * w + lower] += 1.0;
        }
        self.layout.gather(r.as_slice(), &mut self.rhs);
        band_lu_solve(&mut self.work, lower, self.layout.upper, &mut self.rhs).map_err(|(index, pivot)| {
            Error::Singular {
                op: "solver::step",
                index,
                pivot,
            }
        })?;
        let mut out = DVector::zeros(r.len());
        self.layout.scatter(&self.rhs, out.as_mut_slice());
        Ok(out)
    }

    fn backward_euler(&mut self, x: &DVector<f64>, t: f64, dt: f64, d1: f64) -> Result<DVector<f64>> {
        let k1 = self.feedback(t + dt);
        let r = if d1 != 0.0 { x + &self.pattern * (dt * d1) } else { x.clone() };
        self.solve(dt, dt * k1, &r)
    }

    fn crank_nicolson(&mut self, x: &DVector<f64>, t: f64, dt: f64, d0: f64, d1: f64) -> Result<DVector<f64>> {
        let (k0, k1) = (self.feedback(t), self.feedback(t + dt));
        let gx = self.problem.a.apply(x) + self.problem.b.apply(x) * k0;
        let mut r = x - gx * (0.5 * dt);
        if d0 != 0.0 || d1 != 0.0 {
            r += &self.pattern * (0.5 * dt * (d0 + d1));
        }
        self.solve(0.5 * dt, 0.5 * dt * k1, &r)
    }
}

/// One backward-Euler step: solves (I + dt(A + Kψ(t+dt)ⁿB))X⁺ = X + dt·d(t+dt)·p.
pub fn step_backward_euler(problem: &EvolutionProblem, state: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
    const OP: &str = "solver::step_backward_euler";
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::precondition(OP, format!("dt must be positive, got {dt}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(OP, format!("t must be nonnegative, got {t}")));
    }
    problem.validate()?;
    if state.len() != problem.dim() {
        return Err(Error::dimension(OP, format!("state has {} entries, expected {}", state.len(), problem.dim())));
    }
    let (_, d1) = problem.disturbance.sampler().step_values(t, t + dt);
    Stepper::new(problem).backward_euler(state, t, dt, d1)
}

/// Integrates the closed loop from 0 to the horizon.
pub fn simulate(problem: &EvolutionProblem, options: &SimOptions) -> Result<Trajectory> {
    const OP: &str = "solver::simulate";
    problem.validate()?;
    let horizon = problem.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::precondition(OP, format!("horizon must be positive, got {horizon}")));
    }
    let dt_max = options.resolved_dt_max(horizon);
    if !(dt_max > 0.0 && dt_max.is_finite()) {
        return Err(Error::precondition(OP, format!("dt_max must be positive, got {dt_max}")));
    }
    if let DtPolicy::GainAdaptive { c_dt } = options.dt_policy {
        if !(c_dt > 0.0 && c_dt.is_finite()) {
            return Err(Error::precondition(OP, format!("c_dt must be positive, got {c_dt}")));
        }
    }
    if let Some(si) = options.sample_interval {
        if !(si > 0.0 && si.is_finite()) {
            return Err(Error::precondition(OP, format!("sample interval must be positive, got {si}")));
        }
    }
    let gain = gain_condition(problem);
    if !gain.satisfied && !options.allow_uncertified {
        return Err(Error::precondition(
            OP,
            format!(
                "gain condition K*beta > 1/2 fails (K = {}, beta = {}); set allow_uncertified to run anyway",
                problem.gain, gain.beta
            ),
        ));
    }

    let inner = problem.inner().clone();
    let b = &problem.b;
    let schedule = problem.schedule;
    let record = |t: f64, x: &DVector<f64>, traj: &mut Trajectory| {
        let control = problem.gain * schedule.gain_profile_unchecked(t) * inner.norm(&b.apply(x));
        traj.times.push(t);
        traj.lyapunov.push(inner.norm_squared(x));
        traj.control_magnitudes.push(control);
        traj.states.push(x.clone());
    };

    let track_contraction =
        problem.disturbance.is_zero() && problem.a.is_monotone() && problem.b.is_monotone();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        lyapunov: Vec::new(),
        control_magnitudes: Vec::new(),
        inner: inner.clone(),
        meta: TrajectoryMeta {
            scheme: options.scheme.name().to_string(),
            steps: 0,
            rejected_steps: 0,
            certified: gain.satisfied,
            dt_min: f64::INFINITY,
            dt_max: 0.0,
            max_step_growth: 0.0,
            contraction_violations: 0,
        },
    };

    let mut stepper = Stepper::new(problem);
    let mut sampler = problem.disturbance.sampler();
    let mut x = problem.initial_state.clone();
    let mut t = 0.0;
    record(t, &x, &mut traj);

    let mut next_sample = 1usize;
    while t < horizon {
        let target = match options.sample_interval {
            Some(si) => (next_sample as f64 * si).min(horizon),
            None => horizon,
        };
        let mut dt = match options.dt_policy {
            DtPolicy::GainAdaptive { c_dt } => dt_max.min(c_dt / schedule.gain_profile_unchecked(t)),
            DtPolicy::Fixed => dt_max,
        };
        let mut lands = false;
        if t + dt >= target - 1e-3 * dt {
            dt = target - t;
            lands = true;
        }

        let (d0, d1) = sampler.step_values(t, t + dt);
        let mut attempts = 0;
        let x_new = loop {
            let res = match options.scheme {
                Scheme::BackwardEuler => stepper.backward_euler(&x, t, dt, d1),
                Scheme::CrankNicolson => stepper.crank_nicolson(&x, t, dt, d0, d1),
            };
            match res {
                Ok(v) if v.iter().all(|c| c.is_finite()) => break v,
                Ok(_) | Err(Error::Singular { .. }) if attempts < 30 => {
                    attempts += 1;
                    traj.meta.rejected_steps += 1;
                    dt *= 0.5;
                    lands = false;
                }
                Ok(_) => {
                    return Err(Error::Singular {
                        op: OP,
                        index: 0,
                        pivot: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            }
        };

        let (n_old, n_new) = (inner.norm(&x), inner.norm(&x_new));
        if n_old > 0.0 {
            traj.meta.max_step_growth = traj.meta.max_step_growth.max(n_new / n_old);
        }
        if track_contraction && n_new > n_old * (1.0 + CONTRACTION_TOL) {
            traj.meta.contraction_violations += 1;
        }
        traj.meta.steps += 1;
        traj.meta.dt_min = traj.meta.dt_min.min(dt);
        traj.meta.dt_max = traj.meta.dt_max.max(dt);

        t = if lands { target } else { t + dt };
        x = x_new;
        let sampled = lands && options.sample_interval.is_some();
        if sampled {
            next_sample += 1;
        }
        if options.sample_interval.is_none() || sampled || t >= horizon {
            record(t, &x, &mut traj);
        }
    }
    Ok(traj)
}
