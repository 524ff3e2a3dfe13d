//! Trace transformations feeding the detectors: reference-bus angle differences,
//! per-bus normalization, fixed-width windows with ground-truth labels, and the
//! trace CSV format.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::LabelMask;
use crate::trace::{MeasurementTrace, Provenance, TraceError};

/// Scales below this are clamped.
pub const SCALE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reference bus {0} is not in the trace")]
    UnknownReference(usize),
    #[error("normalization stats cover buses {expected:?}, trace has {actual:?}")]
    BusMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("window of {width} samples does not fit a trace of {samples} samples")]
    WindowTooWide { width: usize, samples: usize },
    #[error("invalid window parameter: {0}")]
    WindowParameter(String),
    #[error("label mask has {mask} samples, trace has {trace}")]
    MaskLength { mask: usize, trace: usize },
    #[error("no pre-event samples before t = {0} s")]
    NoBaseline(f64),
    #[error("I/O error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("trace CSV schema mismatch: expected {expected} columns, found {actual} (line {line})")]
    Schema { expected: usize, actual: usize, line: usize },
    #[error("trace CSV parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Replaces every column by its difference to `reference` and drops the reference column.
pub fn to_angle_differences(trace: &MeasurementTrace, reference: usize) -> Result<MeasurementTrace, DatasetError> {
    let r = trace.column_of(reference).ok_or(DatasetError::UnknownReference(reference))?;
    let n = trace.num_buses();
    let ids: Vec<usize> = trace.bus_ids().iter().copied().filter(|&b| b != reference).collect();
    let mut values = Vec::with_capacity(trace.num_samples() * (n - 1));
    for k in 0..trace.num_samples() {
        let row = trace.row(k);
        values.extend((0..n).filter(|&c| c != r).map(|c| row[c] - row[r]));
    }
    Ok(MeasurementTrace::new(
        trace.scenario.clone(),
        trace.provenance,
        trace.times().to_vec(),
        ids,
        values,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum NormMethod {
    /// Center and scale are the mean and standard deviation over `[0, until)`.
    PreEventZScore { until: f64 },
    /// Center is the mean over `[0, until)`; scale is the RMS deviation from that
    /// center over every sample of the fitting traces.
    PreEventCenterRmsScale { until: f64 },
}

impl Default for NormMethod {
    fn default() -> Self {
        NormMethod::PreEventZScore { until: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub method: NormMethod,
    pub bus_ids: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Buses whose scale was clamped to [`SCALE_EPSILON`].
    pub clamped: Vec<usize>,
}

impl NormalizationStats {
    /// Fits per-bus statistics. Centers always come from the first trace's
    /// pre-event segment.
    pub fn fit(traces: &[&MeasurementTrace], method: NormMethod) -> Result<Self, DatasetError> {
        let first = traces.first().ok_or(DatasetError::NoBaseline(0.0))?;
        for tr in traces {
            if tr.bus_ids() != first.bus_ids() {
                return Err(DatasetError::BusMismatch {
                    expected: first.bus_ids().to_vec(),
                    actual: tr.bus_ids().to_vec(),
                });
            }
        }
        let until = match method {
            NormMethod::PreEventZScore { until } | NormMethod::PreEventCenterRmsScale { until } => until,
        };
        let base = first.sample_at_or_after(until);
        if base == 0 {
            return Err(DatasetError::NoBaseline(until));
        }
        let n = first.num_buses();
        let mut center = vec![0.0; n];
        for k in 0..base {
            for (c, v) in first.row(k).iter().enumerate() {
                center[c] += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= base as f64);

        let mut scale = vec![0.0; n];
        match method {
            NormMethod::PreEventZScore { .. } => {
                for k in 0..base {
                    for (c, v) in first.row(k).iter().enumerate() {
                        scale[c] += (v - center[c]).powi(2);
                    }
                }
                scale.iter_mut().for_each(|s| *s = (*s / base as f64).sqrt());
            }
            NormMethod::PreEventCenterRmsScale { .. } => {
                let mut count = 0usize;
                for tr in traces {
                    for k in 0..tr.num_samples() {
                        for (c, v) in tr.row(k).iter().enumerate() {
                            scale[c] += (v - center[c]).powi(2);
                        }
                    }
                    count += tr.num_samples();
                }
                scale.iter_mut().for_each(|s| *s = (*s / count as f64).sqrt());
            }
        }
        let mut clamped = Vec::new();
        for (c, s) in scale.iter_mut().enumerate() {
            if !(*s >= SCALE_EPSILON) {
                *s = SCALE_EPSILON;
                clamped.push(first.bus_ids()[c]);
            }
        }
        Ok(Self {
            method,
            bus_ids: first.bus_ids().to_vec(),
            center,
            scale,
            clamped,
        })
    }

    fn check(&self, trace: &MeasurementTrace) -> Result<(), DatasetError> {
        if trace.bus_ids() != self.bus_ids.as_slice() {
            return Err(DatasetError::BusMismatch {
                expected: self.bus_ids.clone(),
                actual: trace.bus_ids().to_vec(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, trace: &MeasurementTrace) -> Result<MeasurementTrace, DatasetError> {
        self.check(trace)?;
        let mut out = trace.clone();
        let n = self.bus_ids.len();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = (*v - self.center[c]) / self.scale[c];
        }
        Ok(out)
    }

    pub fn invert(&self, trace: &MeasurementTrace) -> Result<MeasurementTrace, DatasetError> {
        self.check(trace)?;
        let mut out = trace.clone();
        let n = self.bus_ids.len();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = *v * self.scale[c] + self.center[c];
        }
        Ok(out)
    }
}

/// Normalizes a trace, fitting pre-event z-score statistics when none are given.
pub fn normalize(
    trace: &MeasurementTrace,
    stats: Option<&NormalizationStats>,
) -> Result<(MeasurementTrace, NormalizationStats), DatasetError> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormalizationStats::fit(&[trace], NormMethod::default())?,
    };
    Ok((stats.apply(trace)?, stats))
}

/// One fixed-width slice of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    pub start_sample: usize,
    pub start_time: f64,
    /// Width in seconds.
    pub width: f64,
    pub bus_ids: Vec<usize>,
    /// Sensors x samples, row-major: `data[s * samples + k]`.
    pub data: Vec<f64>,
    pub samples: usize,
    pub attacked: bool,
    pub attacked_buses: Vec<usize>,
}

impl WindowMatrix {
    pub fn num_sensors(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn sensor(&self, s: usize) -> &[f64] {
        &self.data[s * self.samples..(s + 1) * self.samples]
    }

    /// Samples x sensors copy (time-major).
    pub fn time_major(&self) -> Vec<f64> {
        let n = self.num_sensors();
        let mut out = vec![0.0; n * self.samples];
        for s in 0..n {
            for k in 0..self.samples {
                out[k * n + s] = self.data[s * self.samples + k];
            }
        }
        out
    }
}

/// Cuts fixed-width windows left to right. A window is labeled attacked iff any
/// of its samples is attacked on any bus.
pub fn windows(
    trace: &MeasurementTrace,
    width: f64,
    stride: f64,
    mask: &LabelMask,
) -> Result<Vec<WindowMatrix>, DatasetError> {
    if !(stride > 0.0) || !(width > 0.0) {
        return Err(DatasetError::WindowParameter("width and stride must be positive".into()));
    }
    if mask.num_samples() != trace.num_samples() {
        return Err(DatasetError::MaskLength {
            mask: mask.num_samples(),
            trace: trace.num_samples(),
        });
    }
    let rate = trace.sample_rate();
    let w = (width * rate).round() as usize;
    let s = (stride * rate).round() as usize;
    if w == 0 || s == 0 {
        return Err(DatasetError::WindowParameter("width and stride must span at least one sample".into()));
    }
    let n_samples = trace.num_samples();
    if w > n_samples {
        return Err(DatasetError::WindowTooWide { width: w, samples: n_samples });
    }
    let mask = mask.select(trace.bus_ids());
    let n = trace.num_buses();
    let count = (n_samples - w) / s + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * s;
        let mut data = vec![0.0; n * w];
        for k in 0..w {
            for (c, v) in trace.row(start + k).iter().enumerate() {
                data[c * w + k] = *v;
            }
        }
        let attacked_buses: Vec<usize> = (0..n)
            .filter(|&c| (start..start + w).any(|k| mask.get(k, c)))
            .map(|c| trace.bus_ids()[c])
            .collect();
        out.push(WindowMatrix {
            start_sample: start,
            start_time: trace.times()[start],
            width: w as f64 / rate,
            bus_ids: trace.bus_ids().to_vec(),
            data,
            samples: w,
            attacked: !attacked_buses.is_empty(),
            attacked_buses,
        });
    }
    Ok(out)
}

/// Writes a trace as CSV: `#` metadata lines, a `t,bus_<id>,...` header and one
/// row per sample. Values carry 17 significant digits, so reading back is exact.
pub fn write_trace(trace: &MeasurementTrace, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut text = String::new();
    text.push_str(&format!("# scenario: {}\n", trace.scenario));
    text.push_str(&format!("# provenance: {}\n", trace.provenance.as_str()));
    text.push('t');
    for id in trace.bus_ids() {
        text.push_str(&format!(",bus_{id}"));
    }
    text.push('\n');
    w.write_all(text.as_bytes()).map_err(io)?;
    let mut line = String::new();
    for k in 0..trace.num_samples() {
        line.clear();
        line.push_str(&format!("{:.16e}", trace.times()[k]));
        for v in trace.row(k) {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<MeasurementTrace, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(BufReader::new(file))
}

pub fn parse_trace(reader: impl BufRead) -> Result<MeasurementTrace, DatasetError> {
    let mut scenario = String::new();
    let mut provenance = Provenance::True;
    let mut header: Option<Vec<usize>> = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let line = line.trim_end();
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once(':') {
                match key.trim() {
                    "scenario" => scenario = value.trim().to_string(),
                    "provenance" => {
                        provenance = value.trim().parse().map_err(|reason| DatasetError::Parse { line: lineno, reason })?
                    }
                    _ => {}
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match &header {
            None => {
                if fields[0] != "t" {
                    return Err(DatasetError::Parse {
                        line: lineno,
                        reason: "header must start with `t`".into(),
                    });
                }
                let ids = fields[1..]
                    .iter()
                    .map(|f| {
                        f.strip_prefix("bus_").and_then(|x| x.parse().ok()).ok_or_else(|| DatasetError::Parse {
                            line: lineno,
                            reason: format!("bad column name `{f}`"),
                        })
                    })
                    .collect::<Result<Vec<usize>, _>>()?;
                header = Some(ids);
            }
            Some(ids) => {
                if fields.len() != ids.len() + 1 {
                    return Err(DatasetError::Schema {
                        expected: ids.len() + 1,
                        actual: fields.len(),
                        line: lineno,
                    });
                }
                let parse = |f: &str| {
                    f.trim().parse::<f64>().map_err(|e| DatasetError::Parse {
                        line: lineno,
                        reason: format!("`{f}`: {e}"),
                    })
                };
                times.push(parse(fields[0])?);
                for f in &fields[1..] {
                    values.push(parse(f)?);
                }
            }
        }
    }
    let ids = header.ok_or(DatasetError::Parse {
        line: 0,
        reason: "empty trace file".into(),
    })?;
    Ok(MeasurementTrace::new(scenario, provenance, times, ids, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{attack_label_mask, AttackKind, AttackSpec};

    fn trace_from(columns: &[Vec<f64>], ids: &[usize]) -> MeasurementTrace {
        let samples = columns[0].len();
        let mut values = Vec::new();
        for k in 0..samples {
            for c in columns {
                values.push(c[k]);
            }
        }
        MeasurementTrace::new("s", Provenance::True, MeasurementTrace::uniform_times(samples, 50.0), ids.to_vec(), values)
            .unwrap()
    }

    fn wavy(samples: usize, buses: usize) -> MeasurementTrace {
        let cols: Vec<Vec<f64>> = (0..buses)
            .map(|b| (0..samples).map(|k| ((k as f64) * 0.013 * (b + 1) as f64).sin() + b as f64).collect())
            .collect();
        trace_from(&cols, &(1..=buses).collect::<Vec<_>>())
    }

    #[test]
    fn differences_and_inverse() {
        let tr = wavy(100, 3);
        let d = to_angle_differences(&tr, 2).unwrap();
        assert_eq!(d.bus_ids(), &[1, 3]);
        let r = tr.column(1);
        for (c, id) in [(0usize, 1usize), (1, 3)] {
            let orig = tr.column(tr.column_of(id).unwrap());
            for (k, v) in d.column(c).iter().enumerate() {
                assert!((v + r[k] - orig[k]).abs() < 1e-15);
            }
        }
        let flat = trace_from(&[vec![0.3; 10], vec![0.3; 10]], &[1, 2]);
        assert!(to_angle_differences(&flat, 1).unwrap().values().iter().all(|&v| v == 0.0));
        let toy = trace_from(&[vec![0.1; 10], vec![0.0; 10]], &[1, 2]);
        assert!(to_angle_differences(&toy, 2).unwrap().values().iter().all(|&v| v == 0.1));
        assert!(matches!(to_angle_differences(&tr, 9), Err(DatasetError::UnknownReference(9))));
    }

    #[test]
    fn zscore_against_pre_event_segment() {
        // 50 pre-event samples alternating 0.15 / 0.25: mean 0.2, std 0.05.
        let mut col: Vec<f64> = (0..50).map(|k| if k % 2 == 0 { 0.15 } else { 0.25 }).collect();
        col.extend(std::iter::repeat(0.25).take(50));
        let tr = trace_from(&[col, vec![1.0; 100]], &[1, 2]);
        let (out, stats) = normalize(&tr, None).unwrap();
        assert!((stats.center[0] - 0.2).abs() < 1e-15);
        assert!((stats.scale[0] - 0.05).abs() < 1e-15);
        assert!((out.get(80, 0) - 1.0).abs() < 1e-12);
        assert_eq!(stats.clamped, vec![2]);
        assert!(out.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_round_trip_and_shared_frame() {
        let tr = wavy(200, 4);
        let (out, stats) = normalize(&tr, None).unwrap();
        let back = stats.invert(&out).unwrap();
        for (a, b) in back.values().iter().zip(tr.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (again, _) = normalize(&tr, Some(&stats)).unwrap();
        assert_eq!(again, out);
        let other = wavy(200, 3);
        assert!(matches!(normalize(&other, Some(&stats)), Err(DatasetError::BusMismatch { .. })));
    }

    #[test]
    fn rms_scale_uses_all_samples() {
        let mut col = vec![0.0; 50];
        col.extend(vec![2.0; 50]);
        let tr = trace_from(&[col], &[1]);
        let stats = NormalizationStats::fit(&[&tr], NormMethod::PreEventCenterRmsScale { until: 1.0 }).unwrap();
        assert_eq!(stats.center[0], 0.0);
        assert!((stats.scale[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn window_counts_and_labels() {
        let tr = wavy(1500, 2);
        let clean = LabelMask::clean(1500, tr.bus_ids());
        assert_eq!(windows(&tr, 1.0, 1.0, &clean).unwrap().len(), 30);
        assert_eq!(windows(&tr, 1.0, 0.5, &clean).unwrap().len(), 59);

        let spec = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![2], 2.0, 22.0, 0);
        let mask = attack_label_mask(&spec, tr.times(), tr.bus_ids()).unwrap();
        let ws = windows(&tr, 1.0, 1.0, &mask).unwrap();
        assert!(ws[2].attacked);
        assert_eq!(ws[2].attacked_buses, vec![2]);
        assert!(!ws[1].attacked);
        assert!(ws[22].attacked);
        assert!(!ws[23].attacked);
        assert!(windows(&tr, 40.0, 1.0, &clean).is_err());
        assert!(windows(&tr, 1.0, 0.0, &clean).is_err());
    }

    #[test]
    fn tiling_reconstructs_trace() {
        let tr = wavy(300, 3);
        let ws = windows(&tr, 1.0, 1.0, &LabelMask::clean(300, tr.bus_ids())).unwrap();
        let mut rebuilt = Vec::new();
        for w in &ws {
            rebuilt.extend(w.time_major());
        }
        assert_eq!(rebuilt, tr.values());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut tr = wavy(120, 3).with_provenance(Provenance::Attacked);
        tr.scenario = "step-large".into();
        write_trace(&tr, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back, tr);

        let bad = "t,bus_1,bus_2\n0.0,1.0\n";
        match parse_trace(bad.as_bytes()) {
            Err(DatasetError::Schema { expected, actual, .. }) => assert_eq!((expected, actual), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_trace("".as_bytes()), Err(DatasetError::Parse { .. })));
    }
}
