//! Bounded matched disturbances d(t)·p, with p a fixed spatial pattern.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Constant {
        value: f64,
    },
    Sinusoid {
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
    /// Piecewise constant per time step, uniform in [−amplitude, amplitude].
    BoundedRandom {
        amplitude: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialPattern {
    UniformAcrossDomain,
    /// Only the first block of the state (the v-block of [v; w]).
    FirstComponentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub pattern: SpatialPattern,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            pattern: SpatialPattern::UniformAcrossDomain,
        }
    }

    pub fn new(kind: DisturbanceKind, pattern: SpatialPattern) -> Self {
        Self { kind, pattern }
    }

    /// sup_t |d(t)| of the scalar signal.
    pub fn sup_norm(&self) -> f64 {
        match self.kind {
            DisturbanceKind::Zero => 0.0,
            DisturbanceKind::Constant { value } => value.abs(),
            DisturbanceKind::Sinusoid { amplitude, .. } => amplitude.abs(),
            DisturbanceKind::BoundedRandom { amplitude, .. } => amplitude.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    pub fn is_finite(&self) -> bool {
        match self.kind {
            DisturbanceKind::Zero => true,
            DisturbanceKind::Constant { value } => value.is_finite(),
            DisturbanceKind::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
            } => amplitude.is_finite() && angular_frequency.is_finite() && phase.is_finite(),
            DisturbanceKind::BoundedRandom { amplitude, .. } => amplitude.is_finite(),
        }
    }

    /// The spatial pattern p as a state-sized vector of zeros and ones.
    pub fn pattern_vector(&self, dim: usize, blocks: usize) -> DVector<f64> {
        let active = match self.pattern {
            SpatialPattern::UniformAcrossDomain => dim,
            SpatialPattern::FirstComponentOnly => dim / blocks.max(1),
        };
        DVector::from_iterator(dim, (0..dim).map(|k| if k < active { 1.0 } else { 0.0 }))
    }

    /// A fresh sampler; each simulation run owns its own.
    pub fn sampler(&self) -> DisturbanceSampler {
        let rng = match self.kind {
            DisturbanceKind::BoundedRandom { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        DisturbanceSampler { kind: self.kind, rng }
    }
}

pub struct DisturbanceSampler {
    kind: DisturbanceKind,
    rng: Option<ChaCha8Rng>,
}

impl DisturbanceSampler {
    fn deterministic(&self, t: f64) -> f64 {
        match self.kind {
            DisturbanceKind::Zero | DisturbanceKind::BoundedRandom { .. } => 0.0,
            DisturbanceKind::Constant { value } => value,
            DisturbanceKind::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
            } => amplitude * (angular_frequency * t + phase).sin(),
        }
    }

    fn draw(&mut self) -> Option<f64> {
        match (self.kind, self.rng.as_mut()) {
            (DisturbanceKind::BoundedRandom { amplitude, .. }, Some(rng)) => {
                let a = amplitude.abs();
                if a == 0.0 {
                    Some(0.0)
                } else {
                    Some(rng.random_range(-a..=a))
                }
            }
            _ => None,
        }
    }

    /// Values at both ends of the step [t0, t1]; a random disturbance holds
    /// one draw over the whole step.
    pub fn step_values(&mut self, t0: f64, t1: f64) -> (f64, f64) {
        match self.draw() {
            Some(v) => (v, v),
            None => (self.deterministic(t0), self.deterministic(t1)),
        }
    }

    /// Value at a single node; a random disturbance draws once per call.
    pub fn at(&mut self, t: f64) -> f64 {
        self.draw().unwrap_or_else(|| self.deterministic(t))
    }
}
