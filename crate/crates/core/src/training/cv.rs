use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataset::{kfold_indices, TrainIndices, TrainingData};
use crate::deeponet::{DeepOnetConfig, DeepOnetModel};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    /// Best validation loss of each fold model.
    pub fold_losses: Vec<f64>,
    pub fold_epochs: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// k-fold cross-validation over the training partition. Every fold trains a
/// fresh model initialised from `model_cfg.seed`; folds differ only in data.
pub fn cross_validate(
    model_cfg: &DeepOnetConfig,
    coords: ArrayView2<f64>,
    data: &TrainingData,
    cfg: &TrainConfig,
    k: usize,
) -> Result<CvReport> {
    let positions = TrainIndices::new_unchecked((0..data.len()).collect());
    let folds = kfold_indices(&positions, k, seed::derive(cfg.seed, &[300]))?;
    let mut fold_losses = Vec::with_capacity(k);
    let mut fold_epochs = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let wrap = |e: Error| Error::Fold {
            fold: f,
            source: Box::new(e),
        };
        let fit = data.subset(fold.train.as_slice());
        let val = data.subset(fold.validation.as_slice());
        let model = DeepOnetModel::build(model_cfg.clone()).map_err(wrap)?;
        let (_, history) = train(model, coords, &fit, Some(&val), cfg).map_err(wrap)?;
        let loss = history.best_val_loss.ok_or_else(|| wrap(Error::InvalidState("fold produced no validation loss".into())))?;
        log::info!("fold {}/{k}: best validation loss {loss:.4e} after {} epochs", f + 1, history.len());
        fold_losses.push(loss);
        fold_epochs.push(history.len());
    }
    let n = fold_losses.len() as f64;
    let mean = fold_losses.iter().sum::<f64>() / n;
    let std = (fold_losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CvReport {
        k,
        fold_losses,
        fold_epochs,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::looping::tests::{tiny_cfg, tiny_problem};
    use ndarray::{Array2, Array3};

    #[test]
    fn five_folds() {
        let (c, data) = tiny_problem(10, 8);
        let cfg = TrainConfig { epochs: 3, ..tiny_cfg() };
        let r = cross_validate(&cfg.model_config(1, 8), c.view(), &data, &cfg, 5).unwrap();
        assert_eq!(r.fold_losses.len(), 5);
        assert!(r.std >= 0.0 && r.mean > 0.0);
    }

    #[test]
    fn identical_scenarios_give_identical_folds() {
        let (c, _) = tiny_problem(1, 8);
        let inputs = Array2::from_elem((10, 1), 0.4);
        let targets = Array3::from_shape_fn((10, 3, 8), |(_, k, i)| 0.1 * k as f64 + 0.05 * i as f64);
        let data = TrainingData::from_scaled(inputs, targets).unwrap();
        let cfg = TrainConfig { epochs: 4, batch_size: 8, ..tiny_cfg() };
        let r = cross_validate(&cfg.model_config(1, 8), c.view(), &data, &cfg, 5).unwrap();
        for l in &r.fold_losses {
            assert!((l - r.fold_losses[0]).abs() <= 1e-8, "{:?}", r.fold_losses);
        }
    }

    #[test]
    fn too_many_folds() {
        let (c, data) = tiny_problem(4, 8);
        let cfg = tiny_cfg();
        assert!(matches!(
            cross_validate(&cfg.model_config(1, 8), c.view(), &data, &cfg, 5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fold_errors_carry_the_index() {
        let (c, mut data) = tiny_problem(10, 8);
        data.targets.fill(f64::NAN);
        let cfg = TrainConfig { epochs: 2, ..tiny_cfg() };
        let err = cross_validate(&cfg.model_config(1, 8), c.view(), &data, &cfg, 5).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 0, .. }));
        assert!(err.is_numeric());
    }
}
