use serde_json::json;

use super::{train, TrainConfig, TrainHistory};
use crate::dataset::{fit_scaler, ScalerParams, ScenarioDataset, Split, SplitSpec, TrainIndices, TrainingData};
use crate::deeponet::{DataBinding, DeepOnetModel};
use crate::error::Result;
use crate::seed;

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Trained model with scaler, coordinates and provenance attached.
    pub model: DeepOnetModel,
    pub history: TrainHistory,
    pub scaler: ScalerParams,
}

/// Fit the scaler on `split.train`, train on it (minus an optional validation
/// holdout) and bind the result to the dataset.
///
/// The provenance records the exact training configuration, the split spec and
/// the dataset content checksum, so evaluation can rebuild and verify the
/// untouched test partition.
pub fn fit(ds: &ScenarioDataset, split: &Split, split_spec: &SplitSpec, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let scaler = fit_scaler(ds, &split.train)?;
    let all = TrainingData::from_partition(ds, &split.train, &scaler)?;
    let (fit_set, val_set) = if cfg.validation_fraction > 0.0 {
        let positions = TrainIndices::new_unchecked((0..all.len()).collect());
        let (a, b) = positions.holdout(1.0 - cfg.validation_fraction, seed::derive(cfg.seed, &[500]))?;
        (all.subset(a.as_slice()), Some(all.subset(b.as_slice())))
    } else {
        (all, None)
    };
    let coords = scaler.scale_coords(ds.coords.view());
    let model = DeepOnetModel::build(cfg.model_config(ds.n_input(), ds.n_points()))?;
    log::info!(
        "training {} parameters on {} scenarios × {} nodes",
        model.param_count(),
        fit_set.len(),
        ds.n_points()
    );
    let (mut model, history) = train(model, coords.view(), &fit_set, val_set.as_ref(), cfg)?;
    model.binding = Some(DataBinding {
        scaler: scaler.clone(),
        coords: ds.coords.clone(),
        grid: ds.meta.grid,
        provenance: json!({
            "train_config": cfg,
            "split": split_spec,
            "dataset_sha256": ds.content_digest(),
            "n_scenarios": ds.n_scenarios(),
            "n_train": split.train.len(),
            "n_test": split.test.len(),
        }),
    });
    Ok(FitOutcome {
        model,
        history,
        scaler,
    })
}
