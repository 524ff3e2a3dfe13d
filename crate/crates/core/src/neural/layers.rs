use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu { slope } => tape.leaky_relu(x, slope),
        }
    }
}

/// `y = act(x W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            weight: store.add_glorot(format!("{name}.weight"), inputs, outputs, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, outputs),
            inputs,
            outputs,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        let y = tape.add_row(xw, b);
        self.activation.apply(tape, y)
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths. Hidden layers use
    /// `hidden`, the last layer `output`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(tape, store, x);
        }
        x
    }
}

/// Gated recurrent unit with gates ordered update, reset, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub input_bias: ParamId,
    pub hidden_bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

/// A [`Gru`] whose parameters are already on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    wx: Var,
    wh: Var,
    bx: Var,
    bh: Var,
    hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            input_weight: store.add_glorot(format!("{name}.input_weight"), inputs, 3 * hidden, rng),
            hidden_weight: store.add_glorot(format!("{name}.hidden_weight"), hidden, 3 * hidden, rng),
            input_bias: store.add_zeros(format!("{name}.input_bias"), 1, 3 * hidden),
            hidden_bias: store.add_zeros(format!("{name}.hidden_bias"), 1, 3 * hidden),
            inputs,
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundGru {
        BoundGru {
            wx: tape.param(store, self.input_weight),
            wh: tape.param(store, self.hidden_weight),
            bx: tape.param(store, self.input_bias),
            bh: tape.param(store, self.hidden_bias),
            hidden: self.hidden,
        }
    }
}

impl BoundGru {
    /// Input projections `x Wx + bx` for any number of rows at once.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Var {
        let p = tape.matmul(x, self.wx);
        tape.add_row(p, self.bx)
    }

    /// One step from projected input `xp` (`B x 3H`) and state `h` (`B x H`).
    pub fn step(&self, tape: &mut Tape, xp: Var, h: Var) -> Var {
        let hd = self.hidden;
        let hp = tape.matmul(h, self.wh);
        let hp = tape.add_row(hp, self.bh);
        let xz = tape.slice_cols(xp, 0, hd);
        let hz = tape.slice_cols(hp, 0, hd);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let xr = tape.slice_cols(xp, hd, 2 * hd);
        let hr = tape.slice_cols(hp, hd, 2 * hd);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let xn = tape.slice_cols(xp, 2 * hd, 3 * hd);
        let hn = tape.slice_cols(hp, 2 * hd, 3 * hd);
        let rh = tape.mul(r, hn);
        let n = tape.add(xn, rh);
        let n = tape.tanh(n);
        let d = tape.sub(h, n);
        let zd = tape.mul(z, d);
        tape.add(n, zd)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}
