//! Heat equation with an exponential memory term on (0, 1),
//!
//!   v_t − v_xx + w = −Kψ(t)ⁿ v + d(t),
//!   w_t + βw − ηv = −Kψ(t)ⁿ ε w,
//!
//! with v(t, 0) = v(t, 1) = 0, discretized on N interior nodes and stacked as
//! X = [v; w].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{build_b_epsilon, build_memory_operator, DiscreteOperator, HeatMemoryGeometry};
use crate::solver::{simulate, DisturbanceSpec, EvolutionProblem, SimOptions, SpatialPattern, Trajectory};
use crate::timescale::PsiSchedule;

/// log10 floor for ‖v(t,·)‖₂.
pub const LOG_FLOOR: f64 = -14.0;
/// Required relative agreement between integrated and reconstructed w.
pub const REFORMULATION_TOL: f64 = 1e-2;
/// Minimum number of stored samples per unit time for the memory quadrature.
pub const MIN_SAMPLE_DENSITY: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMemoryExperiment {
    pub geometry: HeatMemoryGeometry,
    pub gain: f64,
    pub exponent: u32,
    pub disturbance: DisturbanceSpec,
    /// v₀ on the interior nodes
    pub v0: Vec<f64>,
    /// w₀ on the interior nodes
    pub w0: Vec<f64>,
    pub horizon: f64,
}

impl Default for HeatMemoryExperiment {
    fn default() -> Self {
        Self::with_geometry(HeatMemoryGeometry::default())
    }
}

impl HeatMemoryExperiment {
    /// K = 2, n = 1, T = 3, d = 0, v₀ = sin(πx), w₀ = 0 on the given grid.
    pub fn with_geometry(geometry: HeatMemoryGeometry) -> Self {
        let v0 = sine_profile(&geometry);
        let w0 = vec![0.0; geometry.n_points];
        Self {
            geometry,
            gain: 2.0,
            exponent: 1,
            disturbance: DisturbanceSpec::zero(),
            v0,
            w0,
            horizon: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "heatmem::HeatMemoryExperiment";
        self.geometry.validate()?;
        let n = self.geometry.n_points;
        if self.v0.len() != n || self.w0.len() != n {
            return Err(Error::dimension(
                OP,
                format!("profiles have {} and {} entries, grid has {n}", self.v0.len(), self.w0.len()),
            ));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::precondition(OP, format!("gain must be positive, got {}", self.gain)));
        }
        if self.exponent == 0 {
            return Err(Error::precondition(OP, "exponent must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::precondition(OP, format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// K·min(1, ε) > 1/2
    pub fn certified(&self) -> bool {
        self.gain * self.geometry.epsilon.min(1.0) > 0.5
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.v0.len(), self.v0.iter().chain(&self.w0).copied())
    }
}

/// sin(πx) sampled on the interior nodes.
pub fn sine_profile(geometry: &HeatMemoryGeometry) -> Vec<f64> {
    geometry
        .nodes()
        .iter()
        .map(|x| (std::f64::consts::PI * x).sin())
        .collect()
}

fn problem_with(exp: &HeatMemoryExperiment, b: DiscreteOperator) -> Result<EvolutionProblem> {
    let problem = EvolutionProblem {
        a: build_memory_operator(&exp.geometry)?,
        b,
        gain: exp.gain,
        schedule: PsiSchedule::affine(exp.exponent)?,
        disturbance: DisturbanceSpec::new(exp.disturbance.kind, SpatialPattern::FirstComponentOnly),
        initial_state: exp.initial_state(),
        horizon: exp.horizon,
    };
    problem.validate()?;
    Ok(problem)
}

/// The closed loop with feedback through B_ε on both blocks and the
/// disturbance acting on the v-block.
pub fn assemble(exp: &HeatMemoryExperiment) -> Result<EvolutionProblem> {
    exp.validate()?;
    problem_with(exp, build_b_epsilon(&exp.geometry)?)
}

/// The variant with feedback on the v-block only, B = diag(I, 0). It is
/// never certified since B is not coercive.
pub fn assemble_v_only_control(exp: &HeatMemoryExperiment) -> Result<EvolutionProblem> {
    exp.validate()?;
    let n = exp.geometry.n_points;
    let matrix = DMatrix::from_fn(2 * n, 2 * n, |i, j| if i == j && i < n { 1.0 } else { 0.0 });
    let b = DiscreteOperator::new(matrix, exp.geometry.inner_product()?, "B_v_only")?
        .with_blocks(2)?
        .certify_monotone()?;
    problem_with(exp, b)
}

/// Splits a stacked state into its v and w blocks.
pub fn split_state(state: &DVector<f64>) -> (&[f64], &[f64]) {
    state.as_slice().split_at(state.len() / 2)
}

/// Discrete L²(0,1) norm (h·Σ v_j²)^{1/2} of the v-block.
pub fn v_norm(geometry: &HeatMemoryGeometry, state: &DVector<f64>) -> f64 {
    let (v, _) = split_state(state);
    (geometry.h() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

pub fn log10_v_norm(geometry: &HeatMemoryGeometry, state: &DVector<f64>) -> f64 {
    let n = v_norm(geometry, state);
    if n > 0.0 {
        n.log10().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationRow {
    pub t: f64,
    /// max_j |w_rec − w| / max(max_j |w|, max_j |w_rec|)
    pub discrepancy: f64,
    pub samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationReport {
    pub rows: Vec<ReformulationRow>,
    pub max_discrepancy: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Rebuilds w(t,·) = e^{−βt}w₀ + η∫₀ᵗ e^{−β(t−s)}v(s,·) ds from the stored
/// v-history with the trapezoid rule and compares it with the integrated w.
/// The trajectory must come from [`assemble_v_only_control`].
pub fn verify_memory_reformulation(
    exp: &HeatMemoryExperiment,
    traj: &Trajectory,
    check_times: &[f64],
) -> Result<ReformulationReport> {
    const OP: &str = "heatmem::verify_memory_reformulation";
    exp.validate()?;
    let n = exp.geometry.n_points;
    if traj.states.first().map(|s| s.len()) != Some(2 * n) {
        return Err(Error::dimension(OP, "trajectory does not match the experiment grid"));
    }
    let (beta, eta) = (exp.geometry.beta, exp.geometry.eta_mem);
    let mut rows = Vec::with_capacity(check_times.len());
    for &t in check_times {
        let k = traj.index_of(t, 1e-9 * t.max(1.0)).ok_or_else(|| Error::InsufficientSamples {
            op: OP,
            msg: format!("no trajectory sample at t = {t}"),
        })?;
        if (k as f64) < MIN_SAMPLE_DENSITY * t {
            return Err(Error::InsufficientSamples {
                op: OP,
                msg: format!("{} samples on [0, {t}], need at least {MIN_SAMPLE_DENSITY} per unit time", k + 1),
            });
        }
        let t_k = traj.times[k];
        let mut rec: Vec<f64> = exp.w0.iter().map(|w| (-beta * t_k).exp() * w).collect();
        for i in 0..k {
            let (s0, s1) = (traj.times[i], traj.times[i + 1]);
            let (e0, e1) = ((-beta * (t_k - s0)).exp(), (-beta * (t_k - s1)).exp());
            let (v0, _) = split_state(&traj.states[i]);
            let (v1, _) = split_state(&traj.states[i + 1]);
            let half = 0.5 * (s1 - s0) * eta;
            for j in 0..n {
                rec[j] += half * (e0 * v0[j] + e1 * v1[j]);
            }
        }
        let (_, w) = split_state(&traj.states[k]);
        let diff = rec.iter().zip(w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = rec.iter().chain(w).fold(0.0f64, |m, a| m.max(a.abs()));
        rows.push(ReformulationRow {
            t,
            discrepancy: if scale > 0.0 { diff / scale } else { 0.0 },
            samples_used: k + 1,
        });
    }
    let max_discrepancy = rows.iter().fold(0.0f64, |m, r| m.max(r.discrepancy));
    Ok(ReformulationReport {
        rows,
        max_discrepancy,
        tol: REFORMULATION_TOL,
        pass: max_discrepancy <= REFORMULATION_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub t: f64,
    pub n_lower: u32,
    pub n_higher: u32,
    /// log10‖v‖ of the higher exponent minus that of the lower one
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_values: Vec<u32>,
    pub times: Vec<f64>,
    /// log10‖v(t,·)‖₂ per exponent, aligned with `times`
    pub curves: Vec<Vec<f64>>,
    pub compare_from: f64,
    pub violations: Vec<OrderingViolation>,
}

impl SweepReport {
    pub fn ordered(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend(self.n_values.iter().map(|n| format!("log10_v_n{n}")));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.curves.iter().map(|c| c[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the experiment once per exponent on a shared sampling grid of
/// spacing `sample_interval` and checks that log‖v‖ is nonincreasing in n at
/// every grid time t ≥ `compare_from`.
pub fn run_n_sweep(
    base: &HeatMemoryExperiment,
    n_values: &[u32],
    options: &SimOptions,
    sample_interval: f64,
    compare_from: f64,
) -> Result<SweepReport> {
    const OP: &str = "heatmem::run_n_sweep";
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::precondition(OP, "need a nonempty list of exponents, each at least 1"));
    }
    let opts = SimOptions {
        sample_interval: Some(sample_interval),
        ..*options
    };
    let runs: Vec<Trajectory> = n_values
        .par_iter()
        .map(|&n| {
            let exp = HeatMemoryExperiment {
                exponent: n,
                ..base.clone()
            };
            simulate(&assemble(&exp)?, &opts)
        })
        .collect::<Result<_>>()?;

    let times = runs[0].times.clone();
    if runs.iter().any(|r| r.times != times) {
        return Err(Error::precondition(OP, "runs did not share the sampling grid"));
    }
    let curves: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.states.iter().map(|s| log10_v_norm(&base.geometry, s)).collect())
        .collect();

    let mut violations = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        if t < compare_from {
            continue;
        }
        for i in 0..n_values.len() {
            for j in 0..n_values.len() {
                if n_values[j] > n_values[i] && curves[j][k] > curves[i][k] {
                    violations.push(OrderingViolation {
                        t,
                        n_lower: n_values[i],
                        n_higher: n_values[j],
                        excess: curves[j][k] - curves[i][k],
                    });
                }
            }
        }
    }
    Ok(SweepReport {
        n_values: n_values.to_vec(),
        times,
        curves,
        compare_from,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureFiles {
    pub state: PathBuf,
    pub control: PathBuf,
    pub objective: PathBuf,
    pub script: PathBuf,
}

const PLOT_SCRIPT: &str = r#"# gnuplot -p plot_figures.gp
set datafile separator ","
set key autotitle columnhead

set terminal pngcairo size 900,650
set output "fig1_state.png"
set title "Distributed state v(t,x)"
set xlabel "t"; set ylabel "x"; set zlabel "v"
set dgrid3d 60,65
splot "fig1_state.csv" using 1:2:3 with lines notitle

set output "fig2_control.png"
set title "Control U(t,x)"
set zlabel "U"
splot "fig2_control.csv" using 1:2:3 with lines notitle
unset dgrid3d

set output "fig3_objective.png"
set title "log10 of the L2 norm of v(t)"
set xlabel "t"; set ylabel "log10 ||v||"
plot "fig3_objective.csv" using 1:2 with lines notitle
"#;

/// Writes the surface data for v and the control, the log-norm curve and a
/// gnuplot script into `out_dir`.
pub fn emit_figures_data(exp: &HeatMemoryExperiment, traj: &Trajectory, out_dir: &Path) -> Result<FigureFiles> {
    fs::create_dir_all(out_dir)?;
    let geom = &exp.geometry;
    let nodes = geom.nodes();
    let schedule = PsiSchedule::affine(exp.exponent)?;

    let files = FigureFiles {
        state: out_dir.join("fig1_state.csv"),
        control: out_dir.join("fig2_control.csv"),
        objective: out_dir.join("fig3_objective.csv"),
        script: out_dir.join("plot_figures.gp"),
    };
    let mut fig1 = csv::Writer::from_path(&files.state)?;
    let mut fig2 = csv::Writer::from_path(&files.control)?;
    let mut fig3 = csv::Writer::from_path(&files.objective)?;
    fig1.write_record(["t", "x", "v"])?;
    fig2.write_record(["t", "x", "u"])?;
    fig3.write_record(["t", "log10_norm_v"])?;

    for (t, state) in traj.times.iter().zip(&traj.states) {
        let (v, _) = split_state(state);
        let gain = exp.gain * schedule.gain_profile(*t)?;
        let ts = t.to_string();
        for (x, val) in std::iter::once((0.0, 0.0))
            .chain(nodes.iter().copied().zip(v.iter().copied()))
            .chain(std::iter::once((1.0, 0.0)))
        {
            let xs = x.to_string();
            fig1.write_record([ts.as_str(), xs.as_str(), val.to_string().as_str()])?;
            // adding 0.0 turns −0 into 0
            let u = -gain * val + 0.0;
            fig2.write_record([ts.as_str(), xs.as_str(), u.to_string().as_str()])?;
        }
        fig3.write_record([ts, log10_v_norm(geom, state).to_string()])?;
    }
    fig1.flush()?;
    fig2.flush()?;
    fig3.flush()?;
    fs::write(&files.script, PLOT_SCRIPT)?;
    Ok(files)
}

/// Writes `state_<k>.csv` with columns x,v,w for every `stride`-th sample.
pub fn write_state_snapshots(
    exp: &HeatMemoryExperiment,
    traj: &Trajectory,
    out_dir: &Path,
    stride: usize,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let nodes = exp.geometry.nodes();
    let mut written = Vec::new();
    for (k, state) in traj.states.iter().enumerate().step_by(stride.max(1)) {
        let (v, w) = split_state(state);
        let mut body = String::from("x,v,w\n");
        for j in 0..nodes.len() {
            writeln!(body, "{},{},{}", nodes[j], v[j], w[j]).expect("writing to a String cannot fail");
        }
        let path = out_dir.join(format!("state_{k}.csv"));
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
