//! Benchmark fixtures built at desk scale.

use hotleg_core::dataset::{fit_scaler, TrainIndices};
use hotleg_core::deeponet::{DataBinding, DeepOnetConfig, DeepOnetModel, InferenceModel};
use hotleg_core::flowgen::{generate_dataset, FluidConfig, GeometryConfig, SurrogateCoeffs, V_RANGE};
use ndarray::{Array2, Array3};
use serde_json::Value;

/// Untrained desk heads model bound to a small generated dataset.
pub fn desk_model() -> DeepOnetModel {
    let ds = generate_dataset(8, V_RANGE, &GeometryConfig::desk(), &FluidConfig::default(), &SurrogateCoeffs::default(), 1)
        .expect("dataset");
    let scaler = fit_scaler(&ds, &TrainIndices::new_unchecked((0..8).collect())).expect("scaler");
    let mut m = DeepOnetModel::build(DeepOnetConfig::desk()).expect("model");
    m.binding = Some(DataBinding { scaler, coords: ds.coords.clone(), grid: ds.meta.grid, provenance: Value::Null });
    m
}

pub fn desk_inference() -> InferenceModel {
    InferenceModel::from_model(desk_model()).expect("inference model")
}

/// One batch of scaled inputs, targets and coordinates for a training step.
pub fn desk_batch(model: &DeepOnetModel, batch: usize) -> (Array2<f64>, Array3<f64>, Array2<f64>) {
    let n = model.n_points();
    let u = Array2::from_shape_fn((batch, 1), |(b, _)| (b as f64 + 0.5) / batch as f64);
    let y = Array3::from_shape_fn((batch, 3, n), |(b, k, i)| ((b + 3 * k + i) as f64 * 0.01).sin() * 0.5 + 0.5);
    let coords = model.binding().expect("binding").scaled_coords();
    (u, y, coords)
}
