//! Properties of the training loop on small delayed-sum problems.

use rnnmotion::toytask::{self, TargetRule};
use rnnmotion::training::{self, TrainConfig};
use rnnmotion::{CellKind, Rng};

fn small_config(cell: CellKind, epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: lr,
        ..TrainConfig::toy(cell)
    }
}

#[test]
fn loss_curve_is_deterministic_and_full_length() {
    let data = toytask::generate_toy_dataset(12, 20, &Rng::new(5)).unwrap();
    for cell in [CellKind::Gru, CellKind::Tanh] {
        let cfg = small_config(cell, 40, 0.05);
        let (p1, r1) = training::train(&data, &cfg).unwrap();
        let (p2, r2) = training::train(&data, &cfg).unwrap();
        assert_eq!(r1.loss_curve.len(), 40);
        assert_eq!(p1, p2);
        let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r1.loss_curve), bits(&r2.loss_curve));
        assert_eq!(r1.without_timing(), r2.without_timing());
    }
}

#[test]
fn zero_learning_rate_leaves_params_untouched() {
    let data = toytask::generate_toy_dataset(3, 10, &Rng::new(1)).unwrap();
    let cfg = small_config(CellKind::Gru, 1, 0.0);
    let (p, r) = training::train(&data, &cfg).unwrap();
    let init = rnnmotion::Params::init(CellKind::Gru, rnnmotion::Dims::new(2, 7, 1).unwrap(), cfg.init_scale, &mut Rng::new(cfg.seed)).unwrap();
    assert_eq!(p, init);
    assert_eq!(r.loss_curve.len(), 1);
}

#[test]
fn small_steps_never_raise_loss_much() {
    let data = toytask::generate_toy_dataset(20, 20, &Rng::new(9)).unwrap();
    for cell in [CellKind::Gru, CellKind::Tanh] {
        let (_, r) = training::train(&data, &small_config(cell, 300, 1e-3)).unwrap();
        for e in 51..r.loss_curve.len() {
            assert!(
                r.loss_curve[e] <= 1.1 * r.loss_curve[e - 1],
                "{cell} epoch {e}: {} -> {}",
                r.loss_curve[e - 1],
                r.loss_curve[e]
            );
        }
    }
}

#[test]
fn comparison_runs_both_cells_with_shared_settings() {
    let data = toytask::generate_toy_dataset(8, 20, &Rng::new(2)).unwrap();
    let cmp = training::compare_cells(&data, &small_config(CellKind::Tanh, 25, 0.05)).unwrap();
    assert_eq!(cmp.gru.config.cell, CellKind::Gru);
    assert_eq!(cmp.tanh.config.cell, CellKind::Tanh);
    assert_eq!(cmp.gru.config.learning_rate, cmp.tanh.config.learning_rate);
    assert_eq!(cmp.gru.config.seed, cmp.tanh.config.seed);
    assert_eq!(cmp.ratio, cmp.gru.final_loss / cmp.tanh.final_loss);
    let again = training::compare_cells(&data, &small_config(CellKind::Tanh, 25, 0.05)).unwrap();
    assert_eq!(cmp.gru.loss_curve, again.gru.loss_curve);
    assert_eq!(cmp.tanh.loss_curve, again.tanh.loss_curve);
}

#[test]
fn divergence_is_reported_with_epoch() {
    let data = toytask::generate_toy_dataset(4, 20, &Rng::new(3)).unwrap();
    let cfg = TrainConfig {
        clip_threshold: 1e300,
        learning_rate: 1e200,
        ..small_config(CellKind::Tanh, 10, 0.0)
    };
    match training::train(&data, &cfg) {
        Err(e @ rnnmotion::Error::Diverged { .. }) => assert!(e.is_numerical()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn instant_sum_loss(cell: CellKind, learning_rate: f64) -> f64 {
    let data = toytask::generate_task(100, 20, &Rng::new(7), TargetRule::InstantSum).unwrap();
    let cfg = TrainConfig {
        learning_rate,
        ..TrainConfig::toy(cell)
    };
    training::train(&data, &cfg).unwrap().1.final_loss
}

/// Without any delay the task needs no memory and both cells fit it.
#[test]
fn instant_sum_control_is_easy_for_both_cells() {
    for cell in [CellKind::Gru, CellKind::Tanh] {
        let loss = instant_sum_loss(cell, 0.01);
        assert!(loss <= 1e-2, "{cell} {loss}");
    }
}
