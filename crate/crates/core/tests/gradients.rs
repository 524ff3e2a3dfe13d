use std::sync::Arc;

use anglewatch::neural::{Activation, Dense, Gru, Neighbourhoods, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{random, worst_relative_error, TOLERANCE};


#[test]
fn dense_layers_all_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for act in [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::LeakyRelu { slope: 0.2 },
    ] {
        for _ in 0..3 {
            let (b, i, o) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));
            let mut store = ParamStore::new();
            let layer = Dense::new(&mut store, "d", i, o, act, &mut rng);
            let bias = store.value(layer.bias).map(|_| 0.1);
            *store.value_mut(layer.bias) = bias;
            let x = random(&mut rng, b, i);
            let y = random(&mut rng, b, o);
            let err = worst_relative_error(&mut store, |tape, s| {
                let xv = tape.constant(x.clone());
                let yv = tape.constant(y.clone());
                let out = layer.forward(tape, s, xv);
                tape.mse(out, yv)
            });
            assert!(err < TOLERANCE, "{act:?}: relative error {err}");
        }
    }
}

#[test]
fn zero_weight_dense_outputs_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "d", 3, 2, Activation::Identity, &mut rng);
    *store.value_mut(layer.weight) = Tensor::zeros(3, 2);
    *store.value_mut(layer.bias) = Tensor::new(1, 2, vec![0.5, -1.5]).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng, 4, 3));
    let y = layer.forward(&mut tape, &store, x);
    for r in 0..4 {
        assert_eq!(tape.value(y).row(r), &[0.5, -1.5]);
    }
}

#[test]
fn recurrent_cell_unrolled() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let (b, i, h, steps) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", i, h, &mut rng);
        for id in [gru.input_bias, gru.hidden_bias] {
            let t = random(&mut rng, 1, 3 * h).map(|v| 0.3 * v);
            *store.value_mut(id) = t;
        }
        let xs: Vec<Tensor> = (0..steps).map(|_| random(&mut rng, b, i)).collect();
        let target = random(&mut rng, b, h);
        let err = worst_relative_error(&mut store, |tape, s| {
            let g = gru.bind(tape, s);
            let mut hs = tape.constant(Tensor::zeros(b, h));
            for x in &xs {
                let xv = tape.constant(x.clone());
                let xp = g.project(tape, xv);
                hs = g.step(tape, xp, hs);
            }
            let t = tape.constant(target.clone());
            tape.mse(hs, t)
        });
        assert!(err < TOLERANCE, "relative error {err}");
    }
}

#[test]
fn graph_attention_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..4 {
        let (n, f, o) = (rng.gen_range(2..6), rng.gen_range(1..5), rng.gen_range(1..4));
        let mut store = ParamStore::new();
        let w = store.add_glorot("w", f, o, &mut rng);
        let a_src = store.add_glorot("a_src", o, 1, &mut rng);
        let a_dst = store.add_glorot("a_dst", o, 1, &mut rng);
        let nbrs = if trial % 2 == 0 {
            Neighbourhoods::complete_blocks(1, n, true)
        } else {
            let lists: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n, (i + n - 1) % n]).collect();
            Neighbourhoods::from_lists(&lists)
        };
        let nbrs = Arc::new(nbrs);
        let h = random(&mut rng, n, f);
        let target = random(&mut rng, n, o);
        let err = worst_relative_error(&mut store, |tape, s| {
            let hv = tape.param(s, w);
            let x = tape.constant(h.clone());
            let wh = tape.matmul(x, hv);
            let asv = tape.param(s, a_src);
            let adv = tape.param(s, a_dst);
            let src = tape.matmul(wh, asv);
            let dst = tape.matmul(wh, adv);
            let out = tape.attend(wh, src, dst, nbrs.clone(), 0.2);
            let out = tape.relu(out);
            let t = tape.constant(target.clone());
            tape.mse(out, t)
        });
        assert!(err < TOLERANCE, "trial {trial}: relative error {err}");
    }
}

#[test]
fn structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&mut rng, 6, 4));
    let b = store.add("b", random(&mut rng, 6, 2));
    let idx = Arc::new(vec![5, 0, 0, 3]);
    let target = random(&mut rng, 4, 3);
    let err = worst_relative_error(&mut store, |tape, s| {
        let av = tape.param(s, a);
        let bv = tape.param(s, b);
        let c = tape.concat_cols(&[av, bv]);
        let c = tape.block_transpose(c, 2);
        let c = tape.reshape(c, 6, 6);
        let c = tape.slice_cols(c, 1, 4);
        let c = tape.gather_rows(c, idx.clone());
        let c = tape.scale(c, 1.7);
        let c = tape.add_scalar(c, 0.3);
        let d = tape.sub(c, c);
        let c = tape.add(c, d);
        let t = tape.constant(target.clone());
        let m = tape.mul(c, t);
        let m = tape.mean_all(m);
        let l = tape.mse(c, t);
        tape.add(l, m)
    });
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn gat_joint_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, w, b) = (3, 4, 2);
    let config = anglewatch::graph::GatConfig {
        hidden: 3,
        ..Default::default()
    };
    let model = anglewatch::graph::GatModel::new(config, (1..=n).collect(), w, 5).unwrap();
    let windows = random(&mut rng, b * w, n);
    let targets = random(&mut rng, b, n);
    let mut store = model.store.clone();
    let err = worst_relative_error(&mut store, |tape, s| model.loss(tape, s, &windows, &targets));
    assert!(err < TOLERANCE, "relative error {err}");
}
