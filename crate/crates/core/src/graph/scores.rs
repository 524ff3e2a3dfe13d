use serde::{Deserialize, Serialize};

use super::GraphError;

/// Floor applied to interquartile ranges.
pub const IQR_EPSILON: f64 = 1e-9;

/// Per-sensor median and interquartile range of errors on normal data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    /// Sensors whose IQR was raised to [`IQR_EPSILON`].
    pub clamped: Vec<usize>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl RobustScaler {
    /// `errors` is `samples x sensors`, row-major.
    pub fn fit(errors: &[f64], sensors: usize) -> Result<Self, GraphError> {
        if sensors == 0 || errors.is_empty() || errors.len() % sensors != 0 {
            return Err(GraphError::NoScores);
        }
        let rows = errors.len() / sensors;
        let mut median = Vec::with_capacity(sensors);
        let mut iqr = Vec::with_capacity(sensors);
        let mut clamped = Vec::new();
        let mut col = Vec::with_capacity(rows);
        for s in 0..sensors {
            col.clear();
            col.extend((0..rows).map(|r| errors[r * sensors + s]));
            col.sort_by(f64::total_cmp);
            median.push(quantile(&col, 0.5));
            let q = quantile(&col, 0.75) - quantile(&col, 0.25);
            if q < IQR_EPSILON {
                clamped.push(s);
                iqr.push(IQR_EPSILON);
            } else {
                iqr.push(q);
            }
        }
        Ok(Self { median, iqr, clamped })
    }

    /// `|e - median| / iqr` for sensor `s`.
    pub fn score(&self, s: usize, error: f64) -> f64 {
        (error - self.median[s]).abs() / self.iqr[s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// Every validation score was zero.
    pub degenerate: bool,
}

/// Maximum of the normal validation scores times `factor`.
pub fn select_threshold(scores: &[f64], factor: f64) -> Result<Threshold, GraphError> {
    if scores.is_empty() {
        return Err(GraphError::NoScores);
    }
    if !(factor > 0.0) {
        return Err(GraphError::Config("threshold factor must be positive".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Threshold {
        value: max * factor,
        degenerate: max == 0.0,
    })
}

/// Validation errors of one contiguous run of targets, `rows x sensors`. The
/// first `lead` rows precede the run and only feed the trailing mean.
pub(crate) struct ValidationRun {
    pub errors: Vec<f64>,
    pub lead: usize,
}

/// Fits the robust scaling on validation errors and thresholds the smoothed
/// overall scores of each run.
pub(crate) fn fit_validation(
    runs: &[ValidationRun],
    sensors: usize,
    smoothing: usize,
    factor: f64,
) -> Result<(RobustScaler, Threshold), GraphError> {
    let own: Vec<f64> = runs.iter().flat_map(|r| r.errors[r.lead * sensors..].iter().copied()).collect();
    let scaler = RobustScaler::fit(&own, sensors)?;
    let mut scores = Vec::with_capacity(own.len() / sensors.max(1));
    for run in runs {
        let overall: Vec<f64> = run
            .errors
            .chunks(sensors)
            .map(|row| row.iter().enumerate().map(|(s, &e)| scaler.score(s, e)).fold(0.0, f64::max))
            .collect();
        scores.extend_from_slice(&trailing_mean(&overall, smoothing)[run.lead..]);
    }
    let threshold = select_threshold(&scores, factor)?;
    Ok((scaler, threshold))
}

/// Per-sensor and overall anomaly scores over a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScoreSeries {
    pub bus_ids: Vec<usize>,
    pub times: Vec<f64>,
    /// First sample with a score; earlier samples hold zeros and never fire.
    pub first_scored: usize,
    /// `samples x sensors`, row-major.
    pub per_sensor: Vec<f64>,
    /// Maximum over sensors at each sample.
    pub overall: Vec<f64>,
    /// Samples in the trailing mean of `overall` that is compared with the threshold.
    pub smoothing: usize,
    pub smoothed: Vec<f64>,
    pub threshold: f64,
    pub fired: Vec<bool>,
}

/// Mean of the last `len` values at each position, counting values before the
/// start as zero.
pub fn trailing_mean(x: &[f64], len: usize) -> Vec<f64> {
    let len = len.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0;
    for k in 0..x.len() {
        sum += x[k];
        if k >= len {
            sum -= x[k - len];
        }
        out.push(sum / len as f64);
    }
    out
}

impl AnomalyScoreSeries {
    pub fn new(bus_ids: Vec<usize>, times: Vec<f64>, first_scored: usize, per_sensor: Vec<f64>, threshold: f64) -> Self {
        let n = bus_ids.len();
        let overall: Vec<f64> = per_sensor
            .chunks(n)
            .map(|row| row.iter().cloned().fold(0.0, f64::max))
            .collect();
        let mut series = Self {
            bus_ids,
            times,
            first_scored,
            per_sensor,
            overall,
            smoothing: 1,
            smoothed: Vec::new(),
            threshold,
            fired: Vec::new(),
        };
        series.smooth(1);
        series
    }

    /// Same series with the firing mask taken from a trailing mean of `len` scored samples.
    pub fn with_smoothing(mut self, len: usize) -> Self {
        self.smooth(len);
        self
    }

    /// Recomputes the firing mask from a trailing mean of `len` scored samples.
    pub fn smooth(&mut self, len: usize) {
        let first = self.first_scored.min(self.overall.len());
        self.smoothing = len.max(1);
        self.smoothed = vec![0.0; first];
        self.smoothed.extend(trailing_mean(&self.overall[first..], self.smoothing));
        self.fired = self
            .smoothed
            .iter()
            .enumerate()
            .map(|(k, &a)| k >= first && a > self.threshold)
            .collect();
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn sensor_score(&self, sample: usize, sensor: usize) -> f64 {
        self.per_sensor[sample * self.bus_ids.len() + sensor]
    }

    /// Overall scores of the scored samples only.
    pub fn scored(&self) -> &[f64] {
        &self.overall[self.first_scored..]
    }

    pub fn fired_fraction(&self) -> f64 {
        let n = self.num_samples() - self.first_scored;
        if n == 0 {
            return 0.0;
        }
        self.fired[self.first_scored..].iter().filter(|&&f| f).count() as f64 / n as f64
    }

    /// One verdict per block of `samples` samples: fired when more than half fired.
    pub fn window_verdicts(&self, samples: usize) -> Vec<bool> {
        self.fired
            .chunks(samples)
            .filter(|c| c.len() == samples)
            .map(|c| 2 * c.iter().filter(|&&f| f).count() > c.len())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBus {
    pub bus: usize,
    pub score: f64,
}

/// Buses by mean per-sensor score over `span` (sample indices), highest first;
/// ties keep sensor order.
pub fn localize(series: &AnomalyScoreSeries, span: std::ops::Range<usize>) -> Result<Vec<RankedBus>, GraphError> {
    if span.is_empty() {
        return Err(GraphError::EmptySpan);
    }
    if span.end > series.num_samples() {
        return Err(GraphError::Shape(format!(
            "span ends at {} past {} samples",
            span.end,
            series.num_samples()
        )));
    }
    let n = series.bus_ids.len();
    let len = span.len() as f64;
    let mut ranked: Vec<RankedBus> = (0..n)
        .map(|s| RankedBus {
            bus: series.bus_ids[s],
            score: span.clone().map(|k| series.sensor_score(k, s)).sum::<f64>() / len,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(ranked)
}
