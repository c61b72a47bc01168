//! Simulation and certification of linear evolution equations
//! Ẋ + AX + Kψ(t)ⁿBX = d(t) under hyperexponentially growing feedback gains.

pub mod certify;
pub mod cli;
pub mod error;
pub mod heatmem;
pub mod operators;
pub mod quadrature;
pub mod solver;
pub mod timescale;

pub use error::{Error, Result};
