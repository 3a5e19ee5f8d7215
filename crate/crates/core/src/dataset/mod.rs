//! Scenario datasets: representation, min-max scaling, partitions, persistence
//! and import of delimited tables.

mod import;
pub(crate) mod io;
mod scaler;
mod split;

use std::cmp::Ordering;
use std::marker::PhantomData;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use import::{import_table, ColumnMap};
pub use io::{
    load_dataset, load_manifest, save_dataset, DatasetManifest, FileEntry, DATASET_FORMAT_VERSION,
};
pub use scaler::{fit_scaler, ChannelRange, ScalerParams};
pub use split::{kfold_indices, split_dataset, Fold, Split, SplitSpec, TestIndices, TrainIndices};

use crate::error::{Error, Result};
use crate::{N_PARAMS, PARAM_NAMES};

/// Structured `n_s × n_r` layout of the node set, when known (s-major ordering).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub n_s: usize,
    pub n_r: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `flowgen`, `import`, `subsample`, ...
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridShape>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            grid: None,
            details: serde_json::Value::Null,
        }
    }
}

/// `M` scenarios of `3 × N` fields over a shared node set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioDataset {
    /// `N × 3` node coordinates, metres.
    pub coords: Array2<f64>,
    /// `M × n` branch inputs (average inlet velocity).
    pub inputs: Array2<f64>,
    /// `M × 3 × N` fields in `[P, V_o, k]` order.
    pub fields: Array3<f64>,
    pub meta: Provenance,
}

impl ScenarioDataset {
    pub fn new(
        coords: Array2<f64>,
        inputs: Array2<f64>,
        fields: Array3<f64>,
        meta: Provenance,
    ) -> Result<Self> {
        let (n_points, dims) = coords.dim();
        let (m, n_input) = inputs.dim();
        if dims != 3 {
            return Err(Error::Shape(format!("coordinates must be N×3, got N×{dims}")));
        }
        if n_points == 0 || m == 0 || n_input == 0 {
            return Err(Error::Shape("dataset needs at least one node, scenario and input".into()));
        }
        if fields.dim() != (m, N_PARAMS, n_points) {
            return Err(Error::Shape(format!(
                "fields are {:?}, expected ({m}, {N_PARAMS}, {n_points})",
                fields.dim()
            )));
        }
        if let Some(g) = meta.grid {
            if g.n_s * g.n_r != n_points {
                return Err(Error::Shape(format!(
                    "grid {}×{} does not cover {n_points} nodes",
                    g.n_s, g.n_r
                )));
            }
        }
        let finite = |v: &f64| v.is_finite();
        if !coords.iter().all(finite) || !inputs.iter().all(finite) || !fields.iter().all(finite)
        {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        if let Some((a, b)) = first_duplicate_row(coords.view()) {
            return Err(Error::InvalidArgument(format!(
                "coordinate rows {a} and {b} are identical"
            )));
        }
        Ok(Self {
            coords,
            inputs,
            fields,
            meta,
        })
    }

    pub fn n_points(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_scenarios(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_input(&self) -> usize {
        self.inputs.ncols()
    }

    /// `3 × N` fields of scenario `j`.
    pub fn scenario(&self, j: usize) -> ArrayView2<'_, f64> {
        self.fields.index_axis(Axis(0), j)
    }

    /// SHA-256 of the little-endian f32 encoding of coords, inputs and fields,
    /// i.e. of exactly what [`save_dataset`] writes.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for blob in [
            io::encode_f32le(self.coords.iter()),
            io::encode_f32le(self.inputs.iter()),
            io::encode_f32le(self.fields.iter()),
        ] {
            h.update(&blob);
        }
        hex::encode(h.finalize())
    }

    /// Keep every `step`-th node after sorting nodes canonically by `(x, y, z)`.
    pub fn subsample_nodes(&self, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidArgument("subsampling step must be ≥ 1".into()));
        }
        let order = canonical_order(self.coords.view());
        let keep: Vec<usize> = order.into_iter().step_by(step).collect();
        let coords = self.coords.select(Axis(0), &keep);
        let fields = self.fields.select(Axis(2), &keep);
        let mut meta = Provenance::new("subsample");
        meta.details = serde_json::json!({
            "step": step,
            "ordering": "canonical (x, y, z)",
            "parent": self.meta,
        });
        Self::new(coords, self.inputs.clone(), fields, meta)
    }

    /// Scenario subset in the given order.
    pub fn select_scenarios(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_scenarios()) {
            return Err(Error::InvalidArgument(format!("scenario index {bad} out of range")));
        }
        Self::new(
            self.coords.clone(),
            self.inputs.select(Axis(0), indices),
            self.fields.select(Axis(0), indices),
            self.meta.clone(),
        )
    }

    /// Min and max of one field over the given scenarios.
    pub fn field_range(&self, param: usize, scenarios: &[usize]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &j in scenarios {
            for &v in self.fields.slice(s![j, param, ..]) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn param_name(param: usize) -> &'static str {
        PARAM_NAMES[param]
    }
}

pub(crate) fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Node permutation sorting coordinate rows lexicographically by `(x, y, z)`.
pub fn canonical_order(coords: ArrayView2<f64>) -> Vec<usize> {
    let rows: Vec<Vec<f64>> = coords.outer_iter().map(|r| r.to_vec()).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&rows[a], &rows[b]).then(a.cmp(&b)));
    order
}

fn first_duplicate_row(coords: ArrayView2<f64>) -> Option<(usize, usize)> {
    let order = canonical_order(coords);
    order.windows(2).find_map(|w| {
        let (a, b) = (coords.row(w[0]), coords.row(w[1]));
        (a == b).then_some((w[0].min(w[1]), w[0].max(w[1])))
    })
}

/// Marker for data drawn from the training partition.
#[derive(Clone, Copy, Debug)]
pub struct TrainRole;
/// Marker for data drawn from the held-out test partition.
#[derive(Clone, Copy, Debug)]
pub struct TestRole;

/// Scaled scenarios of one partition. Training entry points accept only
/// [`TrainingData`], so the test partition cannot reach an optimizer.
#[derive(Clone, Debug)]
pub struct ScaledSet<R> {
    /// `m × n` scaled inputs.
    pub inputs: Array2<f64>,
    /// `m × 3 × N` scaled targets.
    pub targets: Array3<f64>,
    /// Scenario indices in the parent dataset.
    pub indices: Vec<usize>,
    _role: PhantomData<R>,
}

pub type TrainingData = ScaledSet<TrainRole>;
pub type TestData = ScaledSet<TestRole>;

impl<R> ScaledSet<R> {
    fn build(ds: &ScenarioDataset, indices: &[usize], scaler: &ScalerParams) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty partition".into()));
        }
        scaler.check_compatible(ds)?;
        let raw_inputs = ds.inputs.select(Axis(0), indices);
        let raw_fields = ds.fields.select(Axis(0), indices);
        Ok(Self {
            inputs: scaler.scale_inputs(raw_inputs.view()),
            targets: scaler.scale_fields(&raw_fields),
            indices: indices.to_vec(),
            _role: PhantomData,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.targets.dim().2
    }

    /// Rows at the given positions (positions into this set, not the dataset).
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), positions),
            targets: self.targets.select(Axis(0), positions),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
            _role: PhantomData,
        }
    }

    /// Direct construction from already-scaled arrays.
    pub fn from_scaled(inputs: Array2<f64>, targets: Array3<f64>) -> Result<Self> {
        if inputs.nrows() != targets.dim().0 || targets.dim().1 != N_PARAMS {
            return Err(Error::Shape(format!(
                "inputs {:?} and targets {:?} disagree",
                inputs.dim(),
                targets.dim()
            )));
        }
        let m = inputs.nrows();
        Ok(Self {
            inputs,
            targets,
            indices: (0..m).collect(),
            _role: PhantomData,
        })
    }
}

impl TrainingData {
    pub fn from_partition(
        ds: &ScenarioDataset,
        train: &TrainIndices,
        scaler: &ScalerParams,
    ) -> Result<Self> {
        Self::build(ds, train.as_slice(), scaler)
    }
}

impl TestData {
    pub fn from_partition(
        ds: &ScenarioDataset,
        test: &TestIndices,
        scaler: &ScalerParams,
    ) -> Result<Self> {
        Self::build(ds, test.as_slice(), scaler)
    }

    /// Training scenarios wrapped for evaluation (fit diagnostics only).
    pub fn from_training_partition(
        ds: &ScenarioDataset,
        train: &TrainIndices,
        scaler: &ScalerParams,
    ) -> Result<Self> {
        Self::build(ds, train.as_slice(), scaler)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use ndarray::Array;

    /// Small dataset with non-degenerate channels: field values depend on the input
    /// and on the node.
    pub fn toy(m: usize, n: usize) -> ScenarioDataset {
        let coords = Array::from_shape_fn((n, 3), |(i, a)| match a {
            0 => i as f64 * 0.01,
            1 => (i % 3) as f64 * 0.005,
            _ => 0.0,
        });
        let inputs = Array::from_shape_fn((m, 1), |(j, _)| 0.63 + 0.2 * j as f64 / m.max(2) as f64);
        let fields = Array::from_shape_fn((m, 3, n), |(j, p, i)| {
            let u = inputs[[j, 0]];
            match p {
                0 => -200.0 + 300.0 * u * (i as f64 + 1.0) / n as f64,
                1 => u * (1.0 + 0.1 * (i as f64).sin()),
                _ => 0.001 * u * u * (1.0 + i as f64),
            }
        });
        ScenarioDataset::new(coords, inputs, fields, Provenance::new("toy")).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::toy;
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_duplicate_coordinates() {
        let coords = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let err = ScenarioDataset::new(
            coords,
            array![[1.0]],
            Array3::zeros((1, 3, 3)),
            Provenance::new("t"),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(msg)) if msg.contains("rows 0 and 2")));
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let mut f = Array3::zeros((1, 3, 2));
        f[[0, 1, 1]] = f64::NAN;
        let coords = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(ScenarioDataset::new(coords.clone(), array![[1.0]], f, Provenance::new("t")).is_err());
        assert!(matches!(
            ScenarioDataset::new(coords, array![[1.0]], Array3::zeros((1, 2, 2)), Provenance::new("t")),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn subsample_takes_every_fourth_canonical_node() {
        let ds = toy(3, 12);
        let sub = ds.subsample_nodes(4).unwrap();
        assert_eq!(sub.n_points(), 3);
        let order = canonical_order(ds.coords.view());
        assert_eq!(sub.coords.row(1), ds.coords.row(order[4]));
        assert_eq!(sub.fields[[2, 1, 2]], ds.fields[[2, 1, order[8]]]);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let a = toy(4, 5);
        let mut b = a.clone();
        assert_eq!(a.content_digest(), b.content_digest());
        b.fields[[0, 0, 0]] += 1.0;
        assert_ne!(a.content_digest(), b.content_digest());
    }
}
