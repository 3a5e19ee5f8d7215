use std::time::Instant;

use ndarray::{s, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;

use super::{EpochRecord, TrainConfig, TrainHistory};
use crate::dataset::{ScaledSet, TrainingData};
use crate::deeponet::DeepOnetModel;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Gradients};
use crate::seed;

/// A validation loss must beat the best so far by this much to count.
pub const EARLY_STOP_MIN_DELTA: f64 = 1e-12;

const EVAL_CHUNK: usize = 64;

/// Mean squared residual over every `(scenario, field, node)` entry.
pub fn mse_loss(pred: &Array3<f64>, target: ArrayView3<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Inference-mode loss of `model` on a whole scaled set.
pub fn evaluate_loss<R>(model: &DeepOnetModel, coords: ArrayView2<f64>, data: &ScaledSet<R>) -> Result<f64> {
    let mut total = 0.0;
    let m = data.len();
    for start in (0..m).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(m);
        let pred = model.predict_scaled(data.inputs.slice(s![start..end, ..]), coords)?;
        let t = data.targets.slice(s![start..end, .., ..]);
        total += mse_loss(&pred, t) * pred.len() as f64;
    }
    Ok(total / (m * data.targets.dim().1 * data.targets.dim().2) as f64)
}

/// Train on `train`, validating on `val` after every epoch when given.
///
/// `coords` are the scaled node coordinates shared by all scenarios.
pub fn train(
    model: DeepOnetModel,
    coords: ArrayView2<f64>,
    train: &TrainingData,
    val: Option<&TrainingData>,
    cfg: &TrainConfig,
) -> Result<(DeepOnetModel, TrainHistory)> {
    match val {
        Some(v) => train_with_validator(model, coords, train, Some(|m: &DeepOnetModel| evaluate_loss(m, coords, v)), cfg),
        None => train_with_validator(model, coords, train, None::<fn(&DeepOnetModel) -> Result<f64>>, cfg),
    }
}

/// [`train`] with an arbitrary validation objective.
///
/// With a validator the returned parameters are those of the best validation
/// epoch. With `patience > 0`, training stops after `patience` consecutive
/// epochs without an improvement of at least [`EARLY_STOP_MIN_DELTA`].
/// Without one they are those of the epoch with the lowest full training-set
/// loss, so a late Adam spike at constant learning rate is not returned.
pub fn train_with_validator<V>(
    mut model: DeepOnetModel,
    coords: ArrayView2<f64>,
    train: &TrainingData,
    mut validator: Option<V>,
    cfg: &TrainConfig,
) -> Result<(DeepOnetModel, TrainHistory)>
where
    V: FnMut(&DeepOnetModel) -> Result<f64>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if train.n_points() != model.n_points() || coords.nrows() != model.n_points() {
        return Err(Error::Shape(format!(
            "model has {} nodes; data has {} and coordinates {}",
            model.n_points(),
            train.n_points(),
            coords.nrows()
        )));
    }
    if model.config.dropout_rate != cfg.dropout_rate {
        model.config.dropout_rate = cfg.dropout_rate;
    }
    let mut adam = AdamState::new(cfg.adam());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, DeepOnetModel)> = None;
    let mut best_fit: Option<(f64, usize, DeepOnetModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_entry = (train.targets.dim().1 * train.n_points()) as f64;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut seed::derived_rng(cfg.seed, &[100, epoch as u64]));
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let u = train.inputs.select(Axis(0), batch);
            let y = train.targets.select(Axis(0), batch);
            let dropout_seed = seed::derive(cfg.seed, &[200, epoch as u64, b as u64]);
            let (out, cache) = model.forward(u.view(), coords, Some(dropout_seed))?;
            let loss = mse_loss(&out, y.view());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let scale = 2.0 / (batch.len() as f64 * per_entry);
            let d_out = (&out - &y) * scale;
            let grads = model.backward(&cache, &d_out)?;
            adam.step(&mut model, &grads.grad_blocks())
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Divergence { epoch, loss: f64::NAN },
                    other => other,
                })?;
        }
        let train_loss = sum / train.len() as f64;
        let (val_loss, fit_loss) = match validator.as_mut() {
            Some(v) => {
                let l = v(&model)?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, loss: l });
                }
                (Some(l), None)
            }
            None => {
                let l = evaluate_loss(&model, coords, train)?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, loss: l });
                }
                if best_fit.as_ref().is_none_or(|(b, _, _)| l < *b) {
                    best_fit = Some((l, epoch, model.clone()));
                }
                (None, Some(l))
            }
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            fit_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if epoch == 1 || epoch % 25 == 0 || epoch == cfg.epochs {
            log::info!("epoch {epoch}/{}: train {train_loss:.4e} val {val_loss:?}", cfg.epochs);
        }
        if let Some(l) = val_loss {
            let improved = best.as_ref().is_none_or(|(b, _, _)| l < b - EARLY_STOP_MIN_DELTA);
            if improved {
                best = Some((l, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((loss, epoch, params)) = best {
        model = params;
        history.best_epoch = Some(epoch);
        history.best_val_loss = Some(loss);
    } else if let Some((loss, epoch, params)) = best_fit {
        model = params;
        history.best_epoch = Some(epoch);
        history.best_fit_loss = Some(loss);
    }
    Ok((model, history))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::deeponet::DeepOnetConfig;
    use crate::nn::Parameters;
    use ndarray::{Array2, Array3};

    pub(crate) fn tiny_problem(m: usize, n: usize) -> (Array2<f64>, TrainingData) {
        let coords = Array2::from_shape_fn((n, 3), |(i, a)| match a {
            0 => i as f64 / n as f64,
            1 => ((i * 3) % n) as f64 / n as f64,
            _ => 0.0,
        });
        let inputs = Array2::from_shape_fn((m, 1), |(j, _)| j as f64 / m as f64);
        let targets = Array3::from_shape_fn((m, 3, n), |(j, k, i)| {
            let u = inputs[[j, 0]];
            (0.2 + 0.5 * u) * (1.0 + k as f64 * 0.1) * (0.5 + 0.5 * (i as f64 / n as f64))
        });
        (coords, TrainingData::from_scaled(inputs, targets).unwrap())
    }

    pub(crate) fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 40,
            batch_size: 4,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            dropout_rate: 0.0,
            patience: 0,
            seed: 7,
            branch_hidden: vec![16, 16],
            trunk_hidden: vec![16],
            with_heads: true,
            validation_fraction: 0.0,
        }
    }

    fn model_for(cfg: &TrainConfig, n: usize) -> DeepOnetModel {
        DeepOnetModel::build(DeepOnetConfig { n_input: 1, ..cfg.model_config(1, n) }).unwrap()
    }

    #[test]
    fn loss_decreases() {
        let (c, data) = tiny_problem(16, 8);
        let cfg = tiny_cfg();
        let (_, h) = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap();
        let l = h.train_loss();
        assert_eq!(l.len(), 40);
        assert!(l[39] < l[0] / 10.0, "{} -> {}", l[0], l[39]);
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let (c, data) = tiny_problem(12, 8);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, ..tiny_cfg() };
        let m = model_for(&cfg, 8);
        let (trained, h) = train(m.clone(), c.view(), &data, None, &cfg).unwrap();
        assert_eq!(trained, m);
        let l = h.train_loss();
        for w in l.windows(2) {
            assert!((w[1] - w[0]).abs() <= 1e-12 * w[0]);
        }
    }

    #[test]
    fn frozen_validation_stops_after_patience() {
        let (c, data) = tiny_problem(12, 8);
        let cfg = TrainConfig { patience: 5, epochs: 50, ..tiny_cfg() };
        let (_, h) = train_with_validator(model_for(&cfg, 8), c.view(), &data, Some(|_: &DeepOnetModel| Ok(0.5)), &cfg).unwrap();
        // one improving epoch, then five that are not
        assert_eq!(h.len(), 6);
        assert!(h.stopped_early);
        assert_eq!(h.best_epoch, Some(1));
    }

    #[test]
    fn best_parameters_are_restored() {
        let (c, data) = tiny_problem(12, 8);
        let cfg = TrainConfig { patience: 3, epochs: 30, ..tiny_cfg() };
        let mut calls = 0usize;
        let mut snapshots = Vec::new();
        let (m, h) = train_with_validator(
            model_for(&cfg, 8),
            c.view(),
            &data,
            Some(|m: &DeepOnetModel| {
                calls += 1;
                snapshots.push(m.param_blocks()[0].1.to_vec());
                // best at epoch 4
                Ok(if calls == 4 { 0.1 } else { 1.0 + calls as f64 * 1e-3 })
            }),
            &cfg,
        )
        .unwrap();
        assert_eq!(h.best_epoch, Some(4));
        assert_eq!(h.len(), 7);
        assert_eq!(m.param_blocks()[0].1, snapshots[3].as_slice());
        assert!(h.val_loss().iter().all(|&v| v >= h.best_val_loss.unwrap()));
    }

    #[test]
    fn lowest_fit_loss_epoch_is_returned() {
        let (c, data) = tiny_problem(12, 8);
        // large steps make the training loss non-monotone
        let cfg = TrainConfig { epochs: 30, learning_rate: 3e-2, ..tiny_cfg() };
        let (m, h) = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap();
        let fit = h.fit_loss();
        assert_eq!(fit.len(), 30);
        let (arg, min) = fit.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &l)| if l < a.1 { (i, l) } else { a });
        assert_eq!(h.best_epoch, Some(arg + 1));
        assert_eq!(h.best_fit_loss, Some(min));
        assert_eq!(evaluate_loss(&m, c.view(), &data).unwrap(), min);
        assert!(h.val_loss().is_empty() && h.best_val_loss.is_none());
    }

    #[test]
    fn divergence_names_epoch() {
        let (c, mut data) = tiny_problem(8, 8);
        data.targets[[0, 0, 0]] = f64::NAN;
        let cfg = tiny_cfg();
        let err = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn node_mismatch_is_a_shape_error() {
        let (c, data) = tiny_problem(8, 8);
        let cfg = tiny_cfg();
        let err = train(model_for(&cfg, 6), c.view(), &data, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn training_is_deterministic() {
        let (c, data) = tiny_problem(12, 8);
        let cfg = TrainConfig { epochs: 5, dropout_rate: 0.1, ..tiny_cfg() };
        let a = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap();
        let b = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.train_loss(), b.1.train_loss());
    }

    #[test]
    fn full_batch_small_lr_is_monotone() {
        let (c, data) = tiny_problem(12, 8);
        let cfg = TrainConfig { epochs: 10, batch_size: 12, learning_rate: 1e-4, ..tiny_cfg() };
        let (_, h) = train(model_for(&cfg, 8), c.view(), &data, None, &cfg).unwrap();
        for w in h.train_loss().windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
