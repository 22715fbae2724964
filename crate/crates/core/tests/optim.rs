use proptest::prelude::*;
use siamflood::train::{adam_step, plateau_update, AdamConfig, PlateauConfig, SchedulerState};

const PLATEAU: PlateauConfig = PlateauConfig {
    lr_floor: 1e-5,
    factor: 0.1,
    patience: 5,
};

fn trace(losses: &[f32]) -> Vec<f32> {
    let mut s = SchedulerState::new(1e-3);
    losses
        .iter()
        .map(|&l| {
            s = plateau_update(s, l, &PLATEAU).0;
            s.lr
        })
        .collect()
}

#[test]
fn plateau_trace_steps_down_to_the_floor() {
    let mut losses = vec![1.0];
    losses.extend(std::iter::repeat_n(0.9, 39));
    let lrs = trace(&losses);
    // two improvements, then a cut after every fifth stale epoch
    for (i, &lr) in lrs.iter().enumerate() {
        let want = match i {
            0..=5 => 1e-3,
            6..=10 => 1e-4,
            _ => 1e-5,
        };
        assert_eq!(lr, want, "epoch {i}");
    }
}

#[test]
fn improvement_resets_patience() {
    // four stale epochs, then an improvement, then four more: no cut
    let losses = [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5];
    assert!(trace(&losses).iter().all(|&lr| lr == 1e-3));
}

proptest! {
    #[test]
    fn lr_never_increases_or_leaves_the_range(losses in prop::collection::vec(0.0f32..2.0, 1..80)) {
        let lrs = trace(&losses);
        let mut prev = 1e-3f32;
        for lr in lrs {
            prop_assert!(lr <= prev);
            prop_assert!(lr >= 1e-5);
            prop_assert!(lr == 1e-3 || lr == 1e-4 || lr == 1e-5);
            prev = lr;
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr(g in prop::collection::vec(prop_oneof![-10.0f32..-1e-2, 1e-2f32..10.0], 1..16)) {
        let mut w = vec![0.0f32; g.len()];
        let (mut m, mut v) = (vec![0.0; g.len()], vec![0.0; g.len()]);
        adam_step(&mut w, &g, &mut m, &mut v, 1e-3, 1, &AdamConfig::default()).unwrap();
        for (wi, gi) in w.iter().zip(&g) {
            // bias correction makes the first step lr * g / (|g| + eps)
            prop_assert!((wi + 1e-3 * gi.signum()).abs() < 1e-8);
        }
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut w = vec![3.0f32, -2.0];
    let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
    for t in 1..=500 {
        let g: Vec<f32> = w.iter().map(|x| 2.0 * x).collect();
        adam_step(&mut w, &g, &mut m, &mut v, 0.1, t, &AdamConfig::default()).unwrap();
    }
    assert!(w.iter().all(|x| x.abs() < 0.05), "{w:?}");
}

#[test]
fn adam_rejects_step_zero_and_ragged_buffers() {
    let (mut w, mut m, mut v) = (vec![0.0f32; 2], vec![0.0; 2], vec![0.0; 2]);
    assert!(adam_step(&mut w, &[1.0, 1.0], &mut m, &mut v, 1e-3, 0, &AdamConfig::default()).is_err());
    assert!(adam_step(&mut w, &[1.0], &mut m, &mut v, 1e-3, 1, &AdamConfig::default()).is_err());
}
