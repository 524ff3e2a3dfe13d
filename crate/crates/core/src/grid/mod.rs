//! Bus network model, DC operating point and the closed-loop dynamics simulator.

mod network;
mod sim;
mod steady;

pub use network::{load_network, parse_network, Bus, BusKind, BusNetwork, Generator, Line};
pub use sim::{simulate, AngleUnit, EventKind, GridEvent, MeasurementTap, SimConfig, Simulation};
pub use steady::{steady_state, OperatingPoint};

use thiserror::Error;

/// Nominal system frequency (Hz) used to convert rotor speed to per-unit frequency.
pub const NOMINAL_FREQUENCY_HZ: f64 = 60.0;

/// Synchronous speed in rad/s.
pub fn synchronous_speed() -> f64 {
    2.0 * std::f64::consts::PI * NOMINAL_FREQUENCY_HZ
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read network file {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed network file: {0}")]
    Parse(String),
    #[error("invalid network field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("susceptance matrix is singular: buses {component:?} form an isolated island")]
    Singular { component: Vec<usize> },
    #[error("invalid simulation config `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("invalid event: {0}")]
    Event(String),
    #[error("integration diverged at t = {time:.3} s (|state| = {magnitude:.3e})")]
    Diverged {
        time: f64,
        magnitude: f64,
        partial: Box<Simulation>,
    },
}

impl GridError {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GridError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
