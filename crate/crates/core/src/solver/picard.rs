//! Mild-solution oracle: Picard iteration on the Duhamel fixed-point map
//!
//!   (Fv)(t) = S(t−t₀)X(t₀) + ∫_{t₀}^t S(t−s)(−Kψ(s)ⁿB v(s) + d(s)p) ds,
//!   S(t) = exp(−tA),
//!
//! on successive short sub-intervals where ∫‖Kψⁿ B‖ ds ≤ 1/2, so that F is a
//! contraction on each. The integral uses the composite trapezoid rule on a
//! uniform grid, evaluated recursively through S(Δ):
//!
//!   F_{j+1} = S(Δ)(F_j + Δ/2·g_j) + Δ/2·g_{j+1}.
//!
//! This path shares nothing with the implicit stepper beyond the problem
//! data, which is what makes it usable as a cross-check.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::EvolutionProblem;
use crate::error::{Error, Result};

/// Relative sup-norm change between successive iterates at which a
/// sub-interval is considered converged.
pub const PICARD_TOL: f64 = 1e-8;

const MAX_DIM: usize = 64;
const CONTRACTION_TARGET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubintervalReport {
    pub t_start: f64,
    pub t_end: f64,
    /// Proof-side bound (t_end − t_start)·sup‖Kψⁿ B‖_w.
    pub bound_ratio: f64,
    /// Last observed ratio of successive iterate differences.
    pub observed_ratio: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    pub state: DVector<f64>,
    pub subintervals: Vec<SubintervalReport>,
}

/// Fixed point of the Duhamel map at time `t`, with `grid_points` trapezoid
/// cells over [0, t] and at most `iterations` Picard sweeps per sub-interval.
pub fn picard_mild_solution(
    problem: &EvolutionProblem,
    t: f64,
    iterations: usize,
    grid_points: usize,
) -> Result<PicardSolution> {
    const OP: &str = "solver::picard_mild_solution";
    problem.validate()?;
    let m = problem.dim();
    if m > MAX_DIM {
        return Err(Error::precondition(OP, format!("oracle limited to dimension {MAX_DIM}, got {m}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(OP, format!("t must be nonnegative, got {t}")));
    }
    if grid_points == 0 || iterations == 0 {
        return Err(Error::precondition(OP, "need at least one grid cell and one iteration"));
    }
    if t == 0.0 {
        return Ok(PicardSolution {
            state: problem.initial_state.clone(),
            subintervals: Vec::new(),
        });
    }

    let inner = problem.inner();
    let dt = t / grid_points as f64;
    let node = |j: usize| if j == grid_points { t } else { j as f64 * dt };
    let semigroup: DMatrix<f64> = (problem.a.matrix() * -dt).exp();
    let b = problem.b.matrix();
    let b_norm = problem.b.weighted_norm();

    let feedback: Vec<f64> = (0..=grid_points)
        .map(|j| problem.gain * problem.schedule.gain_profile_unchecked(node(j)))
        .collect();
    let pattern = problem.disturbance_pattern();
    let mut sampler = problem.disturbance.sampler();
    let forcing: Vec<f64> = (0..=grid_points).map(|j| sampler.at(node(j))).collect();

    let mut reports = Vec::new();
    let mut x_start = problem.initial_state.clone();
    let mut start = 0;
    while start < grid_points {
        // extend the sub-interval while the contraction bound allows it
        let mut end = start + 1;
        let mut sup_f = feedback[start].max(feedback[end]);
        while end < grid_points {
            let cand = sup_f.max(feedback[end + 1]);
            if (end + 1 - start) as f64 * dt * cand * b_norm > CONTRACTION_TARGET {
                break;
            }
            sup_f = cand;
            end += 1;
        }
        let bound_ratio = (end - start) as f64 * dt * sup_f * b_norm;

        let len = end - start + 1;
        let mut v: Vec<DVector<f64>> = vec![x_start.clone(); len];
        let mut next: Vec<DVector<f64>> = vec![DVector::zeros(m); len];
        let mut prev_diff = f64::NAN;
        let mut observed = f64::NAN;
        let mut iters = 0;
        loop {
            iters += 1;
            let g = |k: usize, v: &DVector<f64>| -> DVector<f64> {
                let j = start + k;
                let mut out = b * v * -feedback[j];
                if forcing[j] != 0.0 {
                    out += &pattern * forcing[j];
                }
                out
            };
            next[0].copy_from(&x_start);
            let mut g_prev = g(0, &v[0]);
            for k in 0..len - 1 {
                let g_next = g(k + 1, &v[k + 1]);
                let carried = &next[k] + &g_prev * (0.5 * dt);
                next[k + 1] = &semigroup * carried + &g_next * (0.5 * dt);
                g_prev = g_next;
            }

            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for (a, b) in next.iter().zip(&v) {
                diff = diff.max(inner.norm(&(a - b)));
                scale = scale.max(inner.norm(a));
            }
            if prev_diff > 0.0 {
                observed = diff / prev_diff;
            }
            prev_diff = diff;
            std::mem::swap(&mut v, &mut next);

            if diff <= PICARD_TOL * scale {
                break;
            }
            if iters >= iterations {
                return Err(Error::NonConvergence {
                    op: OP,
                    iterations: iters,
                    ratio: observed,
                });
            }
        }
        reports.push(SubintervalReport {
            t_start: node(start),
            t_end: node(end),
            bound_ratio,
            observed_ratio: observed,
            iterations: iters,
        });
        x_start = v[len - 1].clone();
        start = end;
    }

    Ok(PicardSolution {
        state: x_start,
        subintervals: reports,
    })
}
