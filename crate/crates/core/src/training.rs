//! Squared-error loss, plain SGD, the full-batch epoch loop and the
//! GRU-versus-Tanh comparison.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, Dims, Params};
use crate::engine::{backward_sequence, clip_gradients, forward_sequence, squared_error_mean, Gradients};
use crate::error::{Error, Result};
use crate::numerics::{DenseVector, Rng};
use crate::toytask::{Sequence, SeriesDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub clip_threshold: f64,
    pub seed: u64,
    pub cell: CellKind,
    pub hidden: usize,
    pub init_scale: f64,
    /// Log the epoch loss every this many epochs; 0 disables logging.
    pub log_every: usize,
}

impl TrainConfig {
    pub const DEFAULT_CLIP: f64 = 5.0;

    /// Defaults for the delayed-sum benchmark (7 hidden units).
    pub fn toy(cell: CellKind) -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 2000,
            clip_threshold: Self::DEFAULT_CLIP,
            seed: 7,
            cell,
            hidden: 7,
            init_scale: Params::default_scale(7),
            log_every: 0,
        }
    }

    /// Defaults for next-frame training on motion data (120 hidden units).
    /// The single long sequence gives a small summed gradient, so the step
    /// size is much larger than for the toy task.
    pub fn motion() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 3000,
            clip_threshold: Self::DEFAULT_CLIP,
            seed: 3,
            cell: CellKind::Gru,
            hidden: 120,
            init_scale: Params::default_scale(120),
            log_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.clip_threshold > 0.0) {
            return bad(format!("clip_threshold must be > 0, got {}", self.clip_threshold));
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be > 0, got {}", self.init_scale));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    /// Measured training time; `None` when stripped for reproducible output.
    pub wall_time_s: Option<f64>,
}

impl TrainReport {
    /// Copy with the wall-clock measurement removed, so that the serialized
    /// report depends only on its inputs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: None,
            ..self.clone()
        }
    }
}

/// Mean over dimensions of the squared difference.
pub fn mse_step_loss(y: &DenseVector, target: &DenseVector) -> Result<f64> {
    if y.len() != target.len() || y.is_empty() {
        return Err(Error::shape("mse_step_loss", format!("len {}", y.len()), format!("len {}", target.len())));
    }
    Ok(squared_error_mean(y.as_slice(), target.as_slice()))
}

/// `θ ← θ − lr · g` for every parameter array.
pub fn sgd_update(p: &mut Params, g: &Gradients, lr: f64) -> Result<()> {
    if !p.same_layout(g.as_params()) {
        return Err(Error::shape(
            "sgd_update",
            format!("{} {}", p.kind(), p.dims()),
            format!("{} {}", g.as_params().kind(), g.as_params().dims()),
        ));
    }
    for (theta, grad) in p.arrays_mut().into_iter().zip(g.arrays()) {
        for (t, d) in theta.iter_mut().zip(grad.data) {
            *t -= lr * d;
        }
    }
    Ok(())
}

/// Loss and gradient of one sequence.
pub fn sequence_gradient(p: &Params, seq: &Sequence) -> Result<(f64, Gradients)> {
    let trace = forward_sequence(p, &seq.inputs, &seq.targets, &seq.mask)?;
    let grads = backward_sequence(p, &trace, &seq.inputs, &seq.targets, &seq.mask)?;
    Ok((trace.total_loss, grads))
}

/// Mean sequence loss and the gradient summed over all sequences. Sequences
/// are processed in parallel but reduced in index order, so the result is
/// bit-identical to a sequential pass.
pub fn batch_gradient(p: &Params, dataset: &SeriesDataset) -> Result<(f64, Gradients)> {
    let per_seq: Vec<(f64, Gradients)> = dataset
        .sequences()
        .par_iter()
        .map(|s| sequence_gradient(p, s))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(p);
    let mut loss = 0.0;
    for (l, g) in &per_seq {
        loss += l;
        total.accumulate(g)?;
    }
    Ok((loss / dataset.len() as f64, total))
}

/// Mean sequence loss over the dataset.
pub fn evaluate(p: &Params, dataset: &SeriesDataset) -> Result<f64> {
    let losses: Vec<f64> = dataset
        .sequences()
        .par_iter()
        .map(|s| forward_sequence(p, &s.inputs, &s.targets, &s.mask).map(|t| t.total_loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / dataset.len() as f64)
}

fn check_dataset(dataset: &SeriesDataset) -> Result<Dims> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    Ok(Dims {
        d_in: dataset.d_in(),
        hidden: 0,
        d_out: dataset.d_out(),
    })
}

/// Initializes parameters from `cfg.seed` and trains them.
pub fn train(dataset: &SeriesDataset, cfg: &TrainConfig) -> Result<(Params, TrainReport)> {
    cfg.validate()?;
    let widths = check_dataset(dataset)?;
    let dims = Dims::new(widths.d_in, cfg.hidden, widths.d_out)?;
    let params = Params::init(cfg.cell, dims, cfg.init_scale, &mut Rng::new(cfg.seed))?;
    train_from(params, dataset, cfg)
}

/// Full-batch training from the given starting point: per epoch, sum the
/// gradients of all sequences, clip the sum to `cfg.clip_threshold` and take
/// one SGD step. `loss_curve[e]` is the mean loss at the start of epoch `e`.
pub fn train_from(mut params: Params, dataset: &SeriesDataset, cfg: &TrainConfig) -> Result<(Params, TrainReport)> {
    cfg.validate()?;
    let widths = check_dataset(dataset)?;
    let dims = params.dims();
    if dims.d_in != widths.d_in || dims.d_out != widths.d_out || dims.hidden != cfg.hidden || params.kind() != cfg.cell {
        return Err(Error::shape(
            "train",
            format!("{} params {dims}", params.kind()),
            format!("{} config with hidden {} on data widths ({}, {})", cfg.cell, cfg.hidden, widths.d_in, widths.d_out),
        ));
    }

    let start = Instant::now();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = batch_gradient(&params, dataset)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        loss_curve.push(loss);
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs) {
            log::info!("{} epoch {epoch:>5}: loss {loss:.6e}", cfg.cell);
        }
        let grads = clip_gradients(grads, cfg.clip_threshold)?;
        sgd_update(&mut params, &grads, cfg.learning_rate)?;
    }
    let final_loss = *loss_curve.last().expect("epochs >= 1");
    Ok((
        params,
        TrainReport {
            config: cfg.clone(),
            loss_curve,
            final_loss,
            wall_time_s: Some(start.elapsed().as_secs_f64()),
        },
    ))
}

/// Both cells trained under one configuration.
#[derive(Clone, Debug)]
pub struct CellComparison {
    pub gru: TrainReport,
    pub tanh: TrainReport,
    pub gru_params: Params,
    pub tanh_params: Params,
    /// `gru.final_loss / tanh.final_loss`.
    pub ratio: f64,
}

/// Trains a GRU and a Tanh network with identical seed, learning rate, epochs,
/// clipping and hidden size.
pub fn compare_cells(dataset: &SeriesDataset, base: &TrainConfig) -> Result<CellComparison> {
    let (gru_params, gru) = train(dataset, &TrainConfig { cell: CellKind::Gru, ..base.clone() })?;
    let (tanh_params, tanh) = train(dataset, &TrainConfig { cell: CellKind::Tanh, ..base.clone() })?;
    let ratio = gru.final_loss / tanh.final_loss;
    Ok(CellComparison {
        gru,
        tanh,
        gru_params,
        tanh_params,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytask::generate_toy_dataset;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_vec(xs.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_step_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse_step_loss(&v(&[1.0; 4]), &v(&[0.0; 4])).unwrap(), 1.0);
        assert_eq!(mse_step_loss(&v(&[2.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 2.0);
        assert!(mse_step_loss(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn sgd_examples() {
        let dims = Dims::new(1, 1, 1).unwrap();
        let mut p = Params::init(CellKind::Tanh, dims, 0.5, &mut Rng::new(1)).unwrap();
        let before = p.clone();
        sgd_update(&mut p, &Gradients::zeros_like(&before), 0.1).unwrap();
        assert_eq!(p, before);

        // Single-parameter arithmetic on b_y.
        let mut p = Params::zeros(CellKind::Tanh, dims);
        *p.arrays_mut()[4].first_mut().unwrap() = 2.0;
        let mut g = Gradients::zeros_like(&p);
        g.arrays_mut()[4][0] = 0.5;
        sgd_update(&mut p, &g, 1.0).unwrap();
        assert_eq!(p.arrays()[4].data, &[1.5]);

        // Two steps of lr equal one step of 2·lr (exact for dyadic values).
        let mut a = Params::zeros(CellKind::Gru, dims);
        let mut b = a.clone();
        let mut g = Gradients::zeros_like(&a);
        g.arrays_mut().iter_mut().for_each(|arr| arr.iter_mut().for_each(|x| *x = 0.375));
        sgd_update(&mut a, &g, 0.25).unwrap();
        sgd_update(&mut a, &g, 0.25).unwrap();
        sgd_update(&mut b, &g, 0.5).unwrap();
        assert_eq!(a, b);

        let wrong = Gradients::zeros_like(&Params::zeros(CellKind::Tanh, dims));
        assert!(sgd_update(&mut b, &wrong, 0.1).is_err());
    }

    #[test]
    fn zero_lr_single_epoch_keeps_params() {
        let data = generate_toy_dataset(4, 8, &Rng::new(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::toy(CellKind::Gru)
        };
        let (p, report) = train(&data, &cfg).unwrap();
        let init = Params::init(CellKind::Gru, Dims::new(2, 7, 1).unwrap(), cfg.init_scale, &mut Rng::new(cfg.seed)).unwrap();
        assert_eq!(p, init);
        assert_eq!(report.loss_curve.len(), 1);
        assert_eq!(report.final_loss, report.loss_curve[0]);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = generate_toy_dataset(10, 12, &Rng::new(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            ..TrainConfig::toy(CellKind::Gru)
        };
        let (p1, r1) = train(&data, &cfg).unwrap();
        let (p2, r2) = train(&data, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.loss_curve, r2.loss_curve);
        assert_eq!(r1.loss_curve.len(), 60);
        assert!(r1.final_loss < r1.loss_curve[0]);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = generate_toy_dataset(2, 8, &Rng::new(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e308,
            clip_threshold: 1e308,
            ..TrainConfig::toy(CellKind::Tanh)
        };
        match train(&data, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::toy(CellKind::Gru);
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { clip_threshold: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { hidden: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn report_serializes_to_documented_keys() {
        let report = TrainReport {
            config: TrainConfig::toy(CellKind::Gru),
            loss_curve: vec![0.5, 0.25],
            final_loss: 0.25,
            wall_time_s: Some(1.5),
        };
        let json: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in ["config", "loss_curve", "final_loss", "wall_time_s"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(serde_json::to_value(report.without_timing()).unwrap()["wall_time_s"].is_null());
    }
}
