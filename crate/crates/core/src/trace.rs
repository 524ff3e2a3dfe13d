use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether a trace holds what the grid actually did or what the sensors reported
/// after tampering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    True,
    Attacked,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::True => "true",
            Provenance::Attacked => "attacked",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" => Ok(Provenance::True),
            "attacked" => Ok(Provenance::Attacked),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("angle buffer has {actual} values, expected {samples} samples x {columns} columns")]
    Shape {
        samples: usize,
        columns: usize,
        actual: usize,
    },
    #[error("time grid is not strictly increasing and uniform at sample {0}")]
    TimeGrid(usize),
    #[error("trace has no samples")]
    Empty,
    #[error("duplicate bus id {0} in trace columns")]
    DuplicateBus(usize),
}

/// Time-indexed matrix of per-bus angle measurements.
///
/// Values are stored row-major: one row per sample, one column per bus in
/// `bus_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTrace {
    pub scenario: String,
    pub provenance: Provenance,
    times: Vec<f64>,
    bus_ids: Vec<usize>,
    values: Vec<f64>,
}

impl MeasurementTrace {
    pub fn new(
        scenario: impl Into<String>,
        provenance: Provenance,
        times: Vec<f64>,
        bus_ids: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, TraceError> {
        if times.is_empty() {
            return Err(TraceError::Empty);
        }
        if values.len() != times.len() * bus_ids.len() {
            return Err(TraceError::Shape {
                samples: times.len(),
                columns: bus_ids.len(),
                actual: values.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &id in &bus_ids {
            if !seen.insert(id) {
                return Err(TraceError::DuplicateBus(id));
            }
        }
        if times.len() > 1 {
            let dt = times[1] - times[0];
            if !(dt > 0.0) {
                return Err(TraceError::TimeGrid(1));
            }
            for k in 1..times.len() {
                let step = times[k] - times[k - 1];
                if !(step > 0.0) || (step - dt).abs() > 1e-9 * dt.max(1.0) {
                    return Err(TraceError::TimeGrid(k));
                }
            }
        }
        Ok(Self {
            scenario: scenario.into(),
            provenance,
            times,
            bus_ids,
            values,
        })
    }

    /// Uniform grid `t_k = k / sample_rate` for `k = 0..samples`.
    pub fn uniform_times(samples: usize, sample_rate: f64) -> Vec<f64> {
        (0..samples).map(|k| k as f64 / sample_rate).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn num_buses(&self) -> usize {
        self.bus_ids.len()
    }

    /// Sample interval in seconds. Single-sample traces report 0.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn sample_rate(&self) -> f64 {
        let dt = self.dt();
        if dt > 0.0 {
            1.0 / dt
        } else {
            0.0
        }
    }

    pub fn duration(&self) -> f64 {
        self.num_samples() as f64 * self.dt()
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let n = self.bus_ids.len();
        &self.values[sample * n..(sample + 1) * n]
    }

    pub fn get(&self, sample: usize, column: usize) -> f64 {
        self.values[sample * self.bus_ids.len() + column]
    }

    pub fn column_of(&self, bus: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn column(&self, column: usize) -> Vec<f64> {
        let n = self.bus_ids.len();
        self.values.iter().skip(column).step_by(n).copied().collect()
    }

    /// First sample index with `t >= time - eps`.
    pub fn sample_at_or_after(&self, time: f64) -> usize {
        let eps = 1e-9 * self.dt().max(1e-12);
        self.times.partition_point(|&t| t < time - eps)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}
