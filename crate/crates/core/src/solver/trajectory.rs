use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::operators::InnerProduct;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub scheme: String,
    pub steps: usize,
    /// Steps retried with a halved step after a breakdown of the linear solve.
    pub rejected_steps: usize,
    pub certified: bool,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Largest one-step ratio ‖X_{k+1}‖_w / ‖X_k‖_w over all steps taken.
    pub max_step_growth: f64,
    /// Steps whose norm grew beyond round-off while d = 0 and the closed loop
    /// was certified monotone.
    pub contraction_violations: usize,
}

/// Sampled closed-loop solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// V(t_k) = ⟨X_k, X_k⟩_w
    pub lyapunov: Vec<f64>,
    /// ‖Kψ(t_k)ⁿ B X_k‖_w
    pub control_magnitudes: Vec<f64>,
    pub inner: InnerProduct,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.lyapunov.iter().map(|v| v.sqrt())
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds the initial sample")
    }

    /// Index of the sample whose time equals `t` to within `tol`.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        let k = self.times.partition_point(|s| *s < t - tol);
        (k < self.times.len() && (self.times[k] - t).abs() <= tol).then_some(k)
    }

    /// Writes `t,normX,V,controlMag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "normX", "V", "controlMag"])?;
        for k in 0..self.len() {
            w.write_record([
                self.times[k].to_string(),
                self.lyapunov[k].sqrt().to_string(),
                self.lyapunov[k].to_string(),
                self.control_magnitudes[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}
