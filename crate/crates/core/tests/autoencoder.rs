use anglewatch::dataset::WindowMatrix;
use anglewatch::neural::{
    autoencoder_window_detector, train_autoencoder, Activation, AutoencoderConfig, AutoencoderModel, Checkpoint,
    Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rank_one(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_fn(rows, cols, |i, j| ((i as f64) * 0.37).sin() * u[j])
}

fn linear_config(epochs: usize, patience: usize) -> AutoencoderConfig {
    AutoencoderConfig {
        hidden: vec![1],
        activation: Activation::Identity,
        train: TrainConfig {
            learning_rate: 1e-2,
            max_epochs: epochs,
            patience,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn linear_bottleneck_recovers_rank_one_data() {
    let data = rank_one(400, 6, 1);
    let mut model = AutoencoderModel::new(6, linear_config(300, 20), 7).unwrap();
    let summary = train_autoencoder(&mut model, &data).unwrap();
    // A rank-1 sample set has zero principal-component reconstruction error.
    let loss = model.loss(&data).unwrap();
    assert!(loss < 1e-3, "loss {loss} after {} epochs", summary.epochs);
}

#[test]
fn zero_data_has_zero_loss_from_the_start() {
    let data = Tensor::zeros(50, 6);
    let mut model = AutoencoderModel::new(6, small_config(), 1).unwrap();
    let summary = train_autoencoder(&mut model, &data).unwrap();
    assert_eq!(summary.validation_loss[0], 0.0);
    assert_eq!(summary.epochs, 1);
}

fn small_config() -> AutoencoderConfig {
    AutoencoderConfig {
        hidden: vec![4, 2],
        ..AutoencoderConfig::default()
    }
}

#[test]
fn zero_patience_runs_one_validation_round() {
    let data = rank_one(100, 6, 2);
    let mut model = AutoencoderModel::new(6, linear_config(50, 0), 3).unwrap();
    let summary = train_autoencoder(&mut model, &data).unwrap();
    assert_eq!(summary.validation_loss.len(), 1);
}

#[test]
fn keeps_best_validation_parameters_and_is_deterministic() {
    let data = rank_one(200, 6, 4);
    let run = || {
        let mut model = AutoencoderModel::new(6, linear_config(40, 3), 5).unwrap();
        let s = train_autoencoder(&mut model, &data).unwrap();
        (model, s)
    };
    let (m1, s1) = run();
    let (m2, s2) = run();
    assert_eq!(m1.store, m2.store);
    assert_eq!(s1, s2);
    assert!(s1.train_loss.iter().chain(&s1.validation_loss).all(|v| v.is_finite()));
    let best = s1.validation_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(s1.best_validation, best);
    assert_eq!(s1.validation_loss[s1.best_epoch - 1], best);
    let val = Tensor::from_fn(20, 6, |i, j| data.get(10 * i + 9, j));
    assert!((m1.loss(&val).unwrap() - best).abs() < 1e-12);
}

#[test]
fn loss_matches_naive_loop() {
    let data = rank_one(30, 6, 6);
    let model = AutoencoderModel::new(6, small_config(), 8).unwrap();
    let y = model.forward(&data).unwrap();
    let mut total = 0.0;
    let mut per_sensor = vec![0.0; 6];
    for i in 0..30 {
        for j in 0..6 {
            let e = (data.get(i, j) - y.get(i, j)).powi(2);
            total += e;
            per_sensor[j] += e / 30.0;
        }
    }
    assert!((model.loss(&data).unwrap() - total / 180.0).abs() < 1e-12);
    let report = model.reconstruction_report(&data).unwrap();
    for (a, b) in report.per_sensor.iter().zip(&per_sensor) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((report.per_sample.iter().sum::<f64>() - total).abs() < 1e-12);
    assert!(model.forward(&Tensor::zeros(2, 5)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = rank_one(60, 6, 9);
    let mut model = AutoencoderModel::new(6, small_config(), 10).unwrap();
    train_autoencoder(&mut model, &data).unwrap();
    let path = dir.path().join("ae.json");
    model.to_checkpoint().save(&path).unwrap();
    let back = AutoencoderModel::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.store, model.store);
    assert_eq!(back.forward(&data).unwrap(), model.forward(&data).unwrap());
    let mut wrong = Checkpoint::load(&path).unwrap();
    wrong.model = "gdn".into();
    assert!(AutoencoderModel::from_checkpoint(&wrong).is_err());
}

fn window(samples: &Tensor) -> WindowMatrix {
    let (rows, cols) = (samples.rows(), samples.cols());
    WindowMatrix {
        start_sample: 0,
        start_time: 0.0,
        width: rows as f64 / 50.0,
        bus_ids: (2..2 + cols).collect(),
        data: samples.transpose().into_data(),
        samples: rows,
        attacked: false,
        attacked_buses: Vec::new(),
    }
}

#[test]
fn detector_flags_shifted_sensor() {
    let flat = Tensor::zeros(200, 67);
    let mut model = AutoencoderModel::new(67, AutoencoderConfig::default(), 11).unwrap();
    train_autoencoder(&mut model, &flat).unwrap();

    let same = window(&Tensor::zeros(50, 67));
    let quiet = autoencoder_window_detector(&model, 1, &same, 0.8, 0).unwrap();
    assert!(!quiet.fired);

    let mut shifted = Tensor::zeros(50, 67);
    for r in 0..50 {
        shifted.set(r, 30, 10.0);
    }
    let w = window(&shifted);
    let samples = Tensor::new(50, 67, w.time_major()).unwrap();
    let report = model.reconstruction_report(&samples).unwrap();
    let argmax = (0..67).max_by(|&a, &b| report.per_sensor[a].total_cmp(&report.per_sensor[b])).unwrap();
    assert_eq!(argmax, 30);
    let v = autoencoder_window_detector(&model, 1, &w, 0.8, 0).unwrap();
    assert!(v.fired);
    assert_eq!(v.flagged, vec![32]);
}
