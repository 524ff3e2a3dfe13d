//! Simulation and detection benchmark for false-data attacks on PMU voltage-angle
//! measurements.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: bus network model, DC operating point and a linearised swing-equation
//!   simulator with governor and AGC control.
//! - [`attack`]: step, poison, ramp and riding-the-wave measurement attacks plus
//!   ground-truth label masks.
//! - [`dataset`]: angle differences, normalization, windowing and trace CSV files.
//! - [`clustering`]: k-means, silhouette and the windowed k-means detector.
//! - [`neural`]: a small reverse-mode autodiff engine and the autoencoder detector.
//! - [`graph`]: graph attention layers and the GAT / GDN detectors.
//! - [`eval`]: metrics, scenario orchestration, suites and report emission.

pub mod attack;
pub mod clustering;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod grid;
pub mod neural;
pub mod trace;

pub use trace::{MeasurementTrace, Provenance};
