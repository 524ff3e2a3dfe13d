use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::neural::Tensor;
use crate::trace::MeasurementTrace;

use super::GraphError;

/// Normalized traces sharing one sensor layout, as `samples x sensors` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    pub bus_ids: Vec<usize>,
    pub sample_rate: f64,
    pub series: Vec<Tensor>,
}

/// One forecasting example: the window `[target - w, target)` of one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleIndex {
    pub trace: usize,
    pub target: usize,
}

impl SeriesSet {
    pub fn from_traces(traces: &[MeasurementTrace]) -> Result<Self, GraphError> {
        let first = traces.first().ok_or_else(|| GraphError::Mismatch("no traces".into()))?;
        let mut series = Vec::with_capacity(traces.len());
        for tr in traces {
            if tr.bus_ids() != first.bus_ids() {
                return Err(GraphError::Mismatch(format!("trace `{}` has a different bus layout", tr.scenario)));
            }
            if (tr.sample_rate() - first.sample_rate()).abs() > 1e-9 {
                return Err(GraphError::Mismatch(format!("trace `{}` has a different sample rate", tr.scenario)));
            }
            series.push(Tensor::new(tr.num_samples(), tr.num_buses(), tr.values().to_vec())?);
        }
        Ok(Self {
            bus_ids: first.bus_ids().to_vec(),
            sample_rate: first.sample_rate(),
            series,
        })
    }

    pub fn num_sensors(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn window_samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate).round().max(1.0) as usize
    }

    fn block_of(&self, sample: usize) -> usize {
        sample / (self.sample_rate.round().max(1.0) as usize)
    }

    /// Splits targets into training and validation examples. Validation holds
    /// every target whose one-second block index `b` satisfies `b % period == 1`;
    /// training keeps every `stride`-th remaining target.
    pub fn examples(&self, window: usize, stride: usize, period: usize) -> (Vec<ExampleIndex>, Vec<ExampleIndex>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (trace, s) in self.series.iter().enumerate() {
            for target in window..s.rows() {
                let ex = ExampleIndex { trace, target };
                if self.block_of(target) % period == 1 {
                    val.push(ex);
                } else if (target - window) % stride.max(1) == 0 {
                    train.push(ex);
                }
            }
        }
        (train, val)
    }

    /// Stacked input windows, `(B * w) x sensors`, time-major per example.
    pub fn windows(&self, examples: &[ExampleIndex], window: usize) -> Tensor {
        let n = self.num_sensors();
        let mut data = Vec::with_capacity(examples.len() * window * n);
        for ex in examples {
            let s = &self.series[ex.trace];
            data.extend_from_slice(&s.data()[(ex.target - window) * n..ex.target * n]);
        }
        Tensor::new(examples.len() * window, n, data).expect("sized")
    }

    /// Multiplies each example's window rows and target row by its factor.
    /// Normal traces centred at their pre-event value respond linearly to the
    /// load-change magnitude, so scaled copies are normal traces as well.
    pub fn scale_examples(windows: &mut Tensor, targets: &mut Tensor, factors: &[f64]) {
        let per = windows.len() / factors.len().max(1);
        let n = targets.cols();
        for (b, &f) in factors.iter().enumerate() {
            windows.data_mut()[b * per..(b + 1) * per].iter_mut().for_each(|x| *x *= f);
            targets.data_mut()[b * n..(b + 1) * n].iter_mut().for_each(|x| *x *= f);
        }
    }

    /// Target rows, `B x sensors`.
    pub fn targets(&self, examples: &[ExampleIndex]) -> Tensor {
        let n = self.num_sensors();
        let mut data = Vec::with_capacity(examples.len() * n);
        for ex in examples {
            data.extend_from_slice(self.series[ex.trace].row(ex.target));
        }
        Tensor::new(examples.len(), n, data).expect("sized")
    }
}

/// Draws magnitude factors for training examples; examples at or past
/// `train_len` (validation) are left unscaled.
pub(crate) struct Augmenter {
    range: [f64; 2],
    train_len: usize,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub(crate) fn new(range: [f64; 2], train_len: usize, seed: u64) -> Self {
        Self {
            range,
            train_len,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5ca1e)),
        }
    }

    pub(crate) fn apply(&mut self, idx: &[usize], windows: &mut Tensor, targets: &mut Tensor) {
        let [lo, hi] = self.range;
        if lo == 1.0 && hi == 1.0 || idx.iter().all(|&i| i >= self.train_len) {
            return;
        }
        let factors: Vec<f64> = idx
            .iter()
            .map(|&i| if i < self.train_len && hi > lo { self.rng.gen_range(lo..hi) } else if i < self.train_len { lo } else { 1.0 })
            .collect();
        SeriesSet::scale_examples(windows, targets, &factors);
    }
}

pub(crate) fn check_augmentation([lo, hi]: [f64; 2]) -> Result<(), GraphError> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(GraphError::Config(format!("magnitude augmentation range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
    }
    Ok(())
}
