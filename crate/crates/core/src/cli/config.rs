//! JSON experiment configuration and flat dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::heatmem::{sine_profile, HeatMemoryExperiment};
use crate::operators::HeatMemoryGeometry;
use crate::solver::{
    DisturbanceKind, DisturbanceSpec, DtPolicy, EvolutionProblem, Scheme, SimOptions, SpatialPattern,
};
use crate::timescale::{PsiKind, PsiSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    HeatMemory,
    /// ẋ + a·x + Kψⁿ·b·x = d(t)
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Sine,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicyName {
    GainAdaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Affine,
    Exponential,
    PowerTower,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceName {
    Zero,
    Constant,
    Sinusoid,
    BoundedRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleName,
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleName::Affine,
            a: 1.0,
            alpha: 1.0,
            b: 1.0,
            c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub kind: DisturbanceName,
    /// level of the constant disturbance
    pub value: f64,
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub phase: f64,
    pub seed: u64,
    pub pattern: SpatialPattern,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            kind: DisturbanceName::Zero,
            value: 0.0,
            amplitude: 0.0,
            angular_frequency: 1.0,
            phase: 0.0,
            seed: 0,
            pattern: SpatialPattern::UniformAcrossDomain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarConfig {
    pub a: f64,
    pub b: f64,
    pub x0: f64,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        Self { a: 0.0, b: 1.0, x0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    /// (a, α) pairs
    pub pairs: Vec<[f64; 2]>,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_count: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            pairs: vec![[1.5, 1.0], [2.0, 1.0], [2.0, 2.0], [5.0, 1.0]],
            tau_min: 1e-2,
            tau_max: 1e3,
            tau_count: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<u32>,
    pub compare_from: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 2, 3, 4, 5],
            compare_from: 0.5,
        }
    }
}

/// Everything needed to reproduce a run. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub n_points: usize,
    pub beta: f64,
    pub eta_mem: f64,
    pub epsilon: f64,
    pub v0: Profile,
    pub w0: Profile,
    pub scalar: ScalarConfig,
    pub gain: f64,
    pub exponent: u32,
    pub horizon: f64,
    pub schedule: ScheduleConfig,
    pub disturbance: DisturbanceConfig,
    pub scheme: Scheme,
    pub dt_max: Option<f64>,
    pub dt_policy: DtPolicyName,
    pub c_dt: f64,
    pub sample_interval: Option<f64>,
    pub fit_window: Option<[f64; 2]>,
    /// every k-th sample is written as state_<k>.csv; 0 disables
    pub snapshot_stride: usize,
    pub lemma: LemmaConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = HeatMemoryGeometry::default();
        Self {
            problem: ProblemKind::HeatMemory,
            n_points: g.n_points,
            beta: g.beta,
            eta_mem: g.eta_mem,
            epsilon: g.epsilon,
            v0: Profile::Sine,
            w0: Profile::Zero,
            scalar: ScalarConfig::default(),
            gain: 2.0,
            exponent: 1,
            horizon: 3.0,
            schedule: ScheduleConfig::default(),
            disturbance: DisturbanceConfig::default(),
            scheme: Scheme::BackwardEuler,
            dt_max: None,
            dt_policy: DtPolicyName::GainAdaptive,
            c_dt: 0.1,
            sample_interval: Some(0.01),
            fit_window: None,
            snapshot_stride: 0,
            lemma: LemmaConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, or the `config` section of a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        const OP: &str = "cli::load_config";
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(OP, format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(OP, format!("{} is not valid JSON: {e}", path.display())))?;
        if is_manifest(&value) {
            value = value["config"].take();
        }
        Self::from_value(value).map_err(|e| Error::config(OP, format!("{}: {e}", path.display())))
    }

    fn from_value(value: Value) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_value(value)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    /// Dotted paths of every settable field.
    pub fn valid_keys() -> Vec<String> {
        let mut keys = Vec::new();
        collect_leaves(&Self::default().to_value(), "", &mut keys);
        keys
    }

    /// Applies `key=value` overrides. Values are parsed as JSON, falling back
    /// to a bare string.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        const OP: &str = "cli::apply_overrides";
        if overrides.is_empty() {
            return Ok(());
        }
        let valid = Self::valid_keys();
        let mut value = self.to_value();
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(OP, format!("override `{item}` is not of the form key=value")))?;
            let key = key.trim();
            if !valid.iter().any(|k| k == key) {
                return Err(Error::config(
                    OP,
                    format!("unknown key `{key}`; valid keys are: {}", valid.join(", ")),
                ));
            }
            let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            let mut slot = &mut value;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .expect("valid keys name existing fields");
            }
            *slot = parsed;
        }
        *self = Self::from_value(value).map_err(|e| Error::config(OP, e.to_string()))?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<HeatMemoryGeometry> {
        HeatMemoryGeometry::new(self.n_points, self.beta, self.eta_mem, self.epsilon)
    }

    pub fn psi_schedule(&self) -> Result<PsiSchedule> {
        let s = &self.schedule;
        let kind = match s.kind {
            ScheduleName::Affine => PsiKind::Affine,
            ScheduleName::Exponential => PsiKind::Exponential { a: s.a, alpha: s.alpha },
            ScheduleName::PowerTower => PsiKind::PowerTower { b: s.b },
            ScheduleName::Constant => PsiKind::Constant { c: s.c },
        };
        PsiSchedule::new(kind, self.exponent)
    }

    pub fn disturbance_spec(&self) -> DisturbanceSpec {
        let d = &self.disturbance;
        let kind = match d.kind {
            DisturbanceName::Zero => DisturbanceKind::Zero,
            DisturbanceName::Constant => DisturbanceKind::Constant { value: d.value },
            DisturbanceName::Sinusoid => DisturbanceKind::Sinusoid {
                amplitude: d.amplitude,
                angular_frequency: d.angular_frequency,
                phase: d.phase,
            },
            DisturbanceName::BoundedRandom => DisturbanceKind::BoundedRandom {
                amplitude: d.amplitude,
                seed: d.seed,
            },
        };
        DisturbanceSpec::new(kind, d.pattern)
    }

    pub fn experiment(&self) -> Result<HeatMemoryExperiment> {
        let geometry = self.geometry()?;
        let profile = |p: Profile| match p {
            Profile::Sine => sine_profile(&geometry),
            Profile::Zero => vec![0.0; geometry.n_points],
        };
        let exp = HeatMemoryExperiment {
            v0: profile(self.v0),
            w0: profile(self.w0),
            geometry,
            gain: self.gain,
            exponent: self.exponent,
            disturbance: self.disturbance_spec(),
            horizon: self.horizon,
        };
        exp.validate()?;
        Ok(exp)
    }

    /// The closed-loop problem described by this config.
    pub fn problem(&self) -> Result<EvolutionProblem> {
        let mut problem = match self.problem {
            ProblemKind::HeatMemory => crate::heatmem::assemble(&self.experiment()?)?,
            ProblemKind::Scalar => {
                let s = &self.scalar;
                let mut p = EvolutionProblem::scalar(s.a, s.b, self.gain, self.psi_schedule()?, s.x0, self.horizon)?;
                p.disturbance = self.disturbance_spec();
                p
            }
        };
        problem.schedule = self.psi_schedule()?;
        problem.validate()?;
        Ok(problem)
    }

    pub fn sim_options(&self, allow_uncertified: bool) -> SimOptions {
        SimOptions {
            scheme: self.scheme,
            dt_max: self.dt_max,
            dt_policy: match self.dt_policy {
                DtPolicyName::GainAdaptive => DtPolicy::GainAdaptive { c_dt: self.c_dt },
                DtPolicyName::Fixed => DtPolicy::Fixed,
            },
            sample_interval: self.sample_interval,
            allow_uncertified,
        }
    }
}

fn is_manifest(value: &Value) -> bool {
    value.get("command").is_some_and(Value::is_string) && value.get("config").is_some_and(Value::is_object)
}

fn collect_leaves(value: &Value, prefix: &str, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_leaves(v, &key, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}
