use anglewatch::attack::{apply_attack, attack_label_mask, AttackError, AttackKind, AttackSpec};
use anglewatch::{MeasurementTrace, Provenance};
use proptest::prelude::*;

const RATE: f64 = 50.0;

fn trace(buses: usize, seconds: f64, value: impl Fn(usize, usize) -> f64) -> MeasurementTrace {
    let samples = (seconds * RATE) as usize;
    let values = (0..samples * buses).map(|i| value(i / buses, i % buses)).collect();
    MeasurementTrace::new("t", Provenance::True, MeasurementTrace::uniform_times(samples, RATE), (1..=buses).collect(), values)
        .unwrap()
}

fn wavy(buses: usize, seconds: f64) -> MeasurementTrace {
    trace(buses, seconds, |k, c| 0.3 + 0.1 * c as f64 + 0.05 * (0.2 * k as f64 + c as f64).sin())
}

fn kind_strategy() -> impl Strategy<Value = AttackKind> {
    prop_oneof![
        (0.5f64..1.5).prop_map(|c| AttackKind::Step { c }),
        (-0.2f64..0.2, 0.0f64..0.3).prop_map(|(mean, std)| AttackKind::Poison { mean, std }),
        (-0.01f64..0.01).prop_map(|slope| AttackKind::Ramp { slope }),
        (-0.5f64..0.5).prop_map(|beta| AttackKind::Rtw { beta, nominal: None, literal: false }),
    ]
}

#[test]
fn formula_examples() {
    let flat = trace(2, 30.0, |_, _| 0.5);
    let step = apply_attack(&flat, &AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![1], 2.0, 22.0, 0)).unwrap();
    let inside = flat.sample_at_or_after(10.0);
    assert_eq!(step.get(inside, 0), 0.515);
    assert_eq!(step.get(inside, 1), 0.5);
    assert_eq!(step.get(0, 0), 0.5);

    let ones = trace(1, 30.0, |_, _| 1.0);
    let ramp = apply_attack(&ones, &AttackSpec::new(AttackKind::Ramp { slope: 0.00007 }, vec![1], 2.0, 22.0, 0)).unwrap();
    let at_12 = ones.sample_at_or_after(12.0);
    assert!((ramp.get(at_12, 0) - 1.0007).abs() < 1e-15);

    let rtw = AttackKind::Rtw { beta: 0.3, nominal: Some(vec![0.5]), literal: false };
    let out = apply_attack(&flat, &AttackSpec::new(rtw, vec![1], 2.0, 22.0, 0)).unwrap();
    assert_eq!(out.values(), flat.values());
}

#[test]
fn poison_matches_its_distribution() {
    // 1000 attacked samples: t in [2, 21.98] at 50 Hz.
    let flat = trace(1, 30.0, |_, _| 0.2);
    let spec = AttackSpec::new(AttackKind::Poison { mean: 0.0, std: 0.08 }, vec![1], 2.0, 21.98, 17);
    let out = apply_attack(&flat, &spec).unwrap();
    let noise: Vec<f64> = (0..flat.num_samples())
        .filter(|&k| spec.in_window(flat.times()[k]))
        .map(|k| out.get(k, 0) - flat.get(k, 0))
        .collect();
    let n = noise.len() as f64;
    assert_eq!(noise.len(), 1000);
    let mean = noise.iter().sum::<f64>() / n;
    let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * 0.08 / n.sqrt(), "mean {mean}");
    assert!((std - 0.08).abs() < 0.008, "std {std}");
}

#[test]
fn label_mask_examples() {
    let grid = MeasurementTrace::uniform_times(1500, RATE);
    let spec = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![5], 2.0, 22.0, 0);
    let mask = attack_label_mask(&spec, &grid, &[3, 5, 9]).unwrap();
    assert_eq!(mask.column_count(1), 1001);
    assert_eq!(mask.column_count(0) + mask.column_count(2), 0);
    let spec = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![], 2.0, 22.0, 0);
    assert_eq!(attack_label_mask(&spec, &grid, &[5]).unwrap_err(), AttackError::NoTargets);
    let spec = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![3, 9], 2.0, 4.0, 0);
    let two = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![9], 3.0, 6.0, 0);
    let a = attack_label_mask(&spec, &grid, &[3, 9]).unwrap();
    let b = attack_label_mask(&two, &grid, &[3, 9]).unwrap();
    for k in 0..grid.len() {
        assert_eq!(a.any()[k], a.get(k, 0) || a.get(k, 1));
        assert_eq!(b.any()[k], b.get(k, 1));
    }
    assert!(attack_label_mask(&spec, &[], &[3]).is_err());
}

#[test]
fn invalid_specs_leave_the_trace_alone() {
    let t = wavy(3, 10.0);
    let outside = AttackSpec::new(AttackKind::Step { c: 2.0 }, vec![1], 5.0, 40.0, 0);
    assert!(matches!(apply_attack(&t, &outside), Err(AttackError::Window { .. })));
    let unknown = AttackSpec::new(AttackKind::Step { c: 2.0 }, vec![1, 7], 1.0, 2.0, 0);
    assert_eq!(apply_attack(&t, &unknown).unwrap_err(), AttackError::UnknownBus(7));
    let dup = AttackSpec::new(AttackKind::Step { c: 2.0 }, vec![2, 2], 1.0, 2.0, 0);
    assert_eq!(apply_attack(&t, &dup).unwrap_err(), AttackError::DuplicateTarget(2));
    let neg = AttackSpec::new(AttackKind::Poison { mean: 0.0, std: -1.0 }, vec![2], 1.0, 2.0, 0);
    assert_eq!(apply_attack(&t, &neg).unwrap_err(), AttackError::Parameter("std"));
}

proptest! {
    #[test]
    fn untouched_outside_support(kind in kind_strategy(), t1 in 0.0f64..5.0, len in 0.1f64..4.0, target in 1usize..5, seed in any::<u64>()) {
        let t = wavy(4, 10.0);
        let spec = AttackSpec::new(kind, vec![target], t1, t1 + len, seed);
        let out = apply_attack(&t, &spec).unwrap();
        let mask = attack_label_mask(&spec, t.times(), t.bus_ids()).unwrap();
        prop_assert_eq!(out.provenance, Provenance::Attacked);
        for k in 0..t.num_samples() {
            for c in 0..4 {
                if !mask.get(k, c) {
                    prop_assert_eq!(out.get(k, c).to_bits(), t.get(k, c).to_bits());
                }
                // The mask covers exactly the target column inside [t1, t2].
                let inside = c + 1 == target && t.times()[k] >= spec.t1 - 1e-9 && t.times()[k] <= spec.t2 + 1e-9;
                prop_assert_eq!(mask.get(k, c), inside);
            }
        }
    }

    #[test]
    fn neutral_parameters_are_identity(t1 in 0.0f64..5.0, len in 0.1f64..4.0, which in 0usize..3) {
        let t = wavy(3, 10.0);
        let kind = [
            AttackKind::Step { c: 1.0 },
            AttackKind::Ramp { slope: 0.0 },
            AttackKind::Rtw { beta: 0.0, nominal: None, literal: false },
        ][which].clone();
        let out = apply_attack(&t, &AttackSpec::new(kind, vec![1, 3], t1, t1 + len, 0)).unwrap();
        prop_assert_eq!(out.values(), t.values());
    }

    #[test]
    fn poison_is_seeded(seed in any::<u64>(), std in 0.01f64..1.0) {
        let t = wavy(2, 4.0);
        let spec = |s| AttackSpec::new(AttackKind::Poison { mean: 0.0, std }, vec![2], 1.0, 3.0, s);
        let a = apply_attack(&t, &spec(seed)).unwrap();
        prop_assert_eq!(&a, &apply_attack(&t, &spec(seed)).unwrap());
        let b = apply_attack(&t, &spec(seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(a.values(), b.values());
    }

    #[test]
    fn ramp_starts_continuous_and_step_jumps(slope in -0.05f64..0.05, c in 0.5f64..1.5, start in 1usize..200) {
        let t = wavy(2, 6.0);
        let t1 = t.times()[start];
        let ramp = apply_attack(&t, &AttackSpec::new(AttackKind::Ramp { slope }, vec![1], t1, t1 + 1.0, 0)).unwrap();
        prop_assert_eq!(ramp.get(start, 0), t.get(start, 0));
        let step = apply_attack(&t, &AttackSpec::new(AttackKind::Step { c }, vec![1], t1, t1 + 1.0, 0)).unwrap();
        let jump = step.get(start, 0) - t.get(start, 0);
        prop_assert!((jump - (c - 1.0) * t.get(start, 0)).abs() < 1e-15);
    }
}
