//! Frozen 32-bit forward pass for serving and timing.
//!
//! Holds weights as f32 (the checkpoint precision) and does no bookkeeping for
//! gradients. Single-scenario head products use a row-axpy loop, batches GEMM.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use super::checkpoint::{binding_from_header, layer_specs, read_verified, section_values};
use super::model::{DataBinding, DeepOnetConfig, DeepOnetModel, FieldPrediction, Space};
use crate::dataset::GridShape;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer};

#[derive(Clone, Debug)]
struct Dense32 {
    w: Array2<f32>,
    b: Array1<f32>,
    relu: bool,
}

impl Dense32 {
    fn from_f64(layer: DenseLayer, hasher: &mut Sha256) -> Self {
        let w = layer.weights.mapv(|v| v as f32);
        let b = layer.bias.mapv(|v| v as f32);
        hash_f32(hasher, w.as_slice().expect("standard layout"));
        hash_f32(hasher, b.as_slice().expect("standard layout"));
        Self {
            w,
            b,
            relu: layer.activation == Activation::Relu,
        }
    }

    fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut y = if x.nrows() == 1 {
            let mut row = Array2::<f32>::zeros((1, self.w.ncols()));
            axpy_rows(x.row(0).as_slice().expect("contiguous"), &self.w, row.as_slice_mut().expect("contiguous"));
            row
        } else {
            x.dot(&self.w)
        };
        y += &self.b;
        if self.relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        y
    }
}

/// `out += Σ_i x[i] · W[i, :]`, streaming `W` once.
fn axpy_rows(x: &[f32], w: &Array2<f32>, out: &mut [f32]) {
    let w = w.as_slice().expect("standard layout");
    let n = out.len();
    for (xi, row) in x.iter().zip(w.chunks_exact(n)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(row) {
            *o += xi * r;
        }
    }
}

fn hash_f32(hasher: &mut Sha256, values: &[f32]) {
    let mut buf = Vec::with_capacity(1 << 16);
    for part in values.chunks(1 << 14) {
        buf.clear();
        for v in part {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        hasher.update(&buf);
    }
}

#[derive(Clone, Debug)]
pub struct InferenceModel {
    config: DeepOnetConfig,
    branch: Vec<Dense32>,
    trunk: Vec<Dense32>,
    heads: Vec<Dense32>,
    binding: DataBinding,
    scaled_coords: Array2<f32>,
    checksum: String,
}

impl InferenceModel {
    /// Freeze a trained model. Consumes it so that large head matrices are
    /// converted one at a time.
    pub fn from_model(model: DeepOnetModel) -> Result<Self> {
        let DeepOnetModel {
            config,
            branch,
            trunk,
            heads,
            binding,
        } = model;
        let binding = binding
            .ok_or_else(|| Error::InvalidState("model has no scaler/coordinates attached".into()))?;
        let mut hasher = Sha256::new();
        let branch = branch.into_layers().into_iter().map(|l| Dense32::from_f64(l, &mut hasher)).collect();
        let trunk = trunk.into_layers().into_iter().map(|l| Dense32::from_f64(l, &mut hasher)).collect();
        let heads = heads.into_iter().map(|l| Dense32::from_f64(l, &mut hasher)).collect();
        let checksum = hex::encode(hasher.finalize());
        Ok(Self::assemble(config, branch, trunk, heads, binding, checksum))
    }

    /// Load directly from a checkpoint directory. The checksum is that of the
    /// weights blob.
    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        let (header, blob) = read_verified(dir)?;
        let binding = binding_from_header(&header).ok_or_else(|| {
            Error::InvalidState(format!(
                "checkpoint {} has no scaler/coordinates; it cannot serve physical inputs",
                dir.display()
            ))
        })?;
        let mut branch = Vec::new();
        let mut trunk = Vec::new();
        let mut heads = Vec::new();
        for ((name, i, o, act), pair) in layer_specs(&header.config).into_iter().zip(header.sections.chunks(2)) {
            let w = Array2::from_shape_vec((i, o), section_values(&blob, &pair[0]).collect())
                .map_err(|e| Error::Shape(e.to_string()))?;
            let layer = Dense32 {
                w,
                b: section_values(&blob, &pair[1]).collect(),
                relu: act == Activation::Relu,
            };
            if name.starts_with("branch.") {
                branch.push(layer);
            } else if name.starts_with("trunk.") {
                trunk.push(layer);
            } else {
                heads.push(layer);
            }
        }
        drop(blob);
        Ok(Self::assemble(header.config, branch, trunk, heads, binding, header.blob_sha256))
    }

    fn assemble(
        config: DeepOnetConfig,
        branch: Vec<Dense32>,
        trunk: Vec<Dense32>,
        heads: Vec<Dense32>,
        binding: DataBinding,
        checksum: String,
    ) -> Self {
        let scaled_coords = binding.scaled_coords().mapv(|v| v as f32);
        Self {
            config,
            branch,
            trunk,
            heads,
            binding,
            scaled_coords,
            checksum,
        }
    }

    pub fn config(&self) -> &DeepOnetConfig {
        &self.config
    }

    pub fn binding(&self) -> &DataBinding {
        &self.binding
    }

    /// SHA-256 of the little-endian f32 parameter blob.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn n_points(&self) -> usize {
        self.config.n_points
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.binding.coords
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.binding.grid
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Physical inputs (`B × n_input`) to `B × 3 × N` fields.
    pub fn predict(&self, inputs: ArrayView2<f64>, space: Space) -> Result<FieldPrediction> {
        if inputs.ncols() != self.config.n_input {
            return Err(Error::Shape(format!(
                "model expects {} inputs per scenario, got {}",
                self.config.n_input,
                inputs.ncols()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Shape("empty input batch".into()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("inputs must be finite".into()));
        }
        let u = self.binding.scaler.scale_inputs(inputs).mapv(|v| v as f32);
        let mut b = u;
        for l in &self.branch {
            b = l.forward(b.view());
        }
        let mut t = self.scaled_coords.clone();
        for l in &self.trunk {
            t = l.forward(t.view());
        }
        let (batch, n) = b.dim();
        let mut out = Array3::<f64>::zeros((batch, self.config.n_params, n));
        for k in 0..self.config.n_params {
            let fused = &b * &t.column(k);
            let z = match self.heads.get(k) {
                Some(h) => h.forward(fused.view()),
                None => fused,
            };
            out.index_axis_mut(Axis(1), k).assign(&z.mapv(f64::from));
        }
        let values = match space {
            Space::Scaled => out,
            Space::Physical => self.binding.scaler.unscale_fields(&out),
        };
        Ok(FieldPrediction { values, space })
    }

    /// One scenario from its average inlet velocity; returns `3 × N`.
    pub fn predict_one(&self, v_in: f64, space: Space) -> Result<Array2<f64>> {
        let p = self.predict(ndarray::arr2(&[[v_in]]).view(), space)?;
        Ok(p.values.index_axis_move(Axis(0), 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_scaler, testutil::toy, TrainIndices};
    use crate::deeponet::checkpoint_save;

    fn bound_model(with_heads: bool) -> DeepOnetModel {
        let ds = toy(6, 5);
        let scaler = fit_scaler(&ds, &TrainIndices::new_unchecked((0..6).collect())).unwrap();
        let mut m = DeepOnetModel::build(DeepOnetConfig {
            n_input: 1,
            n_points: 5,
            n_params: 3,
            branch_hidden: vec![8, 8],
            trunk_hidden: vec![8],
            with_heads,
            dropout_rate: 0.0,
            seed: 3,
        })
        .unwrap();
        m.binding = Some(DataBinding {
            scaler,
            coords: ds.coords.clone(),
            grid: None,
            provenance: serde_json::Value::Null,
        });
        m
    }

    #[test]
    fn matches_f64_model() {
        for heads in [true, false] {
            let m = bound_model(heads);
            let u = ndarray::array![[0.2], [0.55], [0.9]];
            let want = m.predict(u.view(), Space::Physical).unwrap().values;
            let inf = InferenceModel::from_model(m).unwrap();
            let got = inf.predict(u.view(), Space::Physical).unwrap().values;
            let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1.0), "{a} vs {b}");
            }
            let single = inf.predict_one(0.55, Space::Physical).unwrap();
            for (a, b) in single.iter().zip(got.index_axis(Axis(0), 1)) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn checksum_matches_saved_blob() {
        let m = bound_model(true);
        let dir = tempfile::tempdir().unwrap();
        let header = checkpoint_save(&m, dir.path()).unwrap();
        let loaded = InferenceModel::from_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.checksum(), header.blob_sha256);
        let frozen = InferenceModel::from_model(m).unwrap();
        assert_eq!(frozen.checksum(), header.blob_sha256);
        let a = loaded.predict_one(0.4, Space::Scaled).unwrap();
        let b = frozen.predict_one(0.4, Space::Scaled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbound_checkpoint_cannot_serve() {
        let mut m = bound_model(true);
        m.binding = None;
        let dir = tempfile::tempdir().unwrap();
        checkpoint_save(&m, dir.path()).unwrap();
        assert!(matches!(InferenceModel::from_checkpoint(dir.path()), Err(Error::InvalidState(_))));
    }

    #[test]
    fn rejects_non_finite_input() {
        let inf = InferenceModel::from_model(bound_model(true)).unwrap();
        assert!(inf.predict_one(f64::NAN, Space::Physical).is_err());
    }
}
