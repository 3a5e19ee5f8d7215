use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{GridShape, ScalerParams};
use crate::error::{Error, Result};
use crate::nn::{
    param_count, Activation, DenseLayer, DropoutSpec, ForwardCache, Gradients, LayerGrads, Mlp,
    MlpGrads, Parameters,
};
use crate::{seed, N_PARAMS, PARAM_NAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepOnetConfig {
    /// Branch input width (1: average inlet velocity).
    pub n_input: usize,
    /// Number of spatial nodes `N`.
    pub n_points: usize,
    /// Output fields per node (3: P, V_o, k).
    pub n_params: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub with_heads: bool,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl DeepOnetConfig {
    /// Heads model at full resolution: branch `[1, 512, 512, 512, 11340]`,
    /// trunk `[3, 512, 512, 256, 3]`, three `11340 × 11340` heads.
    pub fn paper() -> Self {
        Self {
            n_input: 1,
            n_points: 11_340,
            n_params: N_PARAMS,
            branch_hidden: vec![512, 512, 512],
            trunk_hidden: vec![512, 512, 256],
            with_heads: true,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    /// Heads-free comparison model: 11 branch and 10 trunk hidden layers of 4096.
    pub fn vanilla_paper() -> Self {
        Self {
            branch_hidden: vec![4096; 11],
            trunk_hidden: vec![4096; 10],
            with_heads: false,
            ..Self::paper()
        }
    }

    /// Same layer widths as [`paper`](Self::paper) on a 1,260-node plane.
    pub fn desk() -> Self {
        Self {
            n_points: 1260,
            ..Self::paper()
        }
    }

    pub fn branch_sizes(&self) -> Vec<usize> {
        std::iter::once(self.n_input)
            .chain(self.branch_hidden.iter().copied())
            .chain(std::iter::once(self.n_points))
            .collect()
    }

    pub fn trunk_sizes(&self) -> Vec<usize> {
        std::iter::once(3)
            .chain(self.trunk_hidden.iter().copied())
            .chain(std::iter::once(self.n_params))
            .collect()
    }

    pub fn head_param_count(&self) -> usize {
        if self.with_heads {
            self.n_params * (self.n_points * self.n_points + self.n_points)
        } else {
            0
        }
    }

    /// Closed-form count of learnable parameters.
    pub fn param_count(&self) -> usize {
        param_count(&self.branch_sizes()) + param_count(&self.trunk_sizes()) + self.head_param_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_input == 0 || self.n_points == 0 {
            return Err(Error::Config("n_input and n_points must be ≥ 1".into()));
        }
        if self.n_params != N_PARAMS {
            return Err(Error::Config(format!(
                "n_params must be {N_PARAMS} (P, V_o, k), got {}",
                self.n_params
            )));
        }
        if self.branch_hidden.is_empty() || self.trunk_hidden.is_empty() {
            return Err(Error::Config("branch and trunk need at least one hidden layer".into()));
        }
        if self.branch_hidden.contains(&0) || self.trunk_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Which space field values are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Scaled,
    Physical,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Scaled => "scaled",
            Space::Physical => "physical",
        })
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Space::Scaled),
            "physical" => Ok(Space::Physical),
            other => Err(Error::InvalidArgument(format!(
                "space must be `scaled` or `physical`, got `{other}`"
            ))),
        }
    }
}

/// `B × 3 × N` field values in `[P, V_o, k]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPrediction {
    pub values: Array3<f64>,
    pub space: Space,
}

/// What a trained model needs to go from physical inputs to physical fields.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBinding {
    pub scaler: ScalerParams,
    /// `N × 3` physical node coordinates the model was trained on.
    pub coords: Array2<f64>,
    pub grid: Option<GridShape>,
    /// Training configuration, dataset checksum, split, ...
    pub provenance: serde_json::Value,
}

impl DataBinding {
    pub fn scaled_coords(&self) -> Array2<f64> {
        self.scaler.scale_coords(self.coords.view())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetModel {
    pub config: DeepOnetConfig,
    pub branch: Mlp,
    pub trunk: Mlp,
    /// One `N × N` linear map per field, present iff `config.with_heads`.
    pub heads: Vec<DenseLayer>,
    pub binding: Option<DataBinding>,
}

#[derive(Clone, Debug)]
pub struct DeepOnetCache {
    branch: ForwardCache,
    trunk: ForwardCache,
    branch_out: Array2<f64>,
    trunk_out: Array2<f64>,
    fused: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetGrads {
    pub branch: MlpGrads,
    pub trunk: MlpGrads,
    pub heads: Vec<LayerGrads>,
}

impl Gradients for DeepOnetGrads {
    fn grad_blocks(&self) -> Vec<&[f64]> {
        let mut out = self.branch.grad_blocks();
        out.extend(self.trunk.grad_blocks());
        for h in &self.heads {
            out.push(h.weights.as_slice().expect("standard layout"));
            out.push(h.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// `fused[k][i] = branch_out[i] · trunk_out[i][k]` for one scenario.
pub fn fuse(branch_out: ArrayView1<f64>, trunk_out: ArrayView2<f64>) -> Result<Array2<f64>> {
    if trunk_out.nrows() != branch_out.len() {
        return Err(Error::Shape(format!(
            "branch output has {} entries but trunk was evaluated at {} nodes",
            branch_out.len(),
            trunk_out.nrows()
        )));
    }
    let mut fused = trunk_out.t().to_owned();
    fused *= &branch_out;
    Ok(fused)
}

impl DeepOnetModel {
    /// Xavier weights and zero biases everywhere; deterministic in `config.seed`.
    pub fn build(config: DeepOnetConfig) -> Result<Self> {
        config.validate()?;
        let branch = Mlp::new(&config.branch_sizes(), seed::derive(config.seed, &[0]))?;
        let trunk = Mlp::new(&config.trunk_sizes(), seed::derive(config.seed, &[1]))?;
        let heads = if config.with_heads {
            (0..config.n_params)
                .map(|k| {
                    DenseLayer::xavier(
                        config.n_points,
                        config.n_points,
                        Activation::Linear,
                        seed::derive(config.seed, &[2, k as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            branch,
            trunk,
            heads,
            binding: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.branch.param_count()
            + self.trunk.param_count()
            + self.heads.iter().map(DenseLayer::param_count).sum::<usize>()
    }

    pub fn n_points(&self) -> usize {
        self.config.n_points
    }

    pub fn binding(&self) -> Result<&DataBinding> {
        self.binding
            .as_ref()
            .ok_or_else(|| Error::InvalidState("model has no scaler/coordinates attached".into()))
    }

    fn check_inputs(&self, u: &ArrayView2<f64>, coords: &ArrayView2<f64>) -> Result<()> {
        if u.ncols() != self.config.n_input {
            return Err(Error::Shape(format!(
                "branch expects {} inputs per scenario, got {}",
                self.config.n_input,
                u.ncols()
            )));
        }
        if coords.ncols() != 3 {
            return Err(Error::Shape(format!("coordinates must be N×3, got N×{}", coords.ncols())));
        }
        if coords.nrows() != self.config.n_points {
            return Err(Error::Shape(format!(
                "model is built for {} nodes, got {} coordinates",
                self.config.n_points,
                coords.nrows()
            )));
        }
        Ok(())
    }

    /// Training-capable forward pass. `dropout_seed = None` is inference mode.
    pub fn forward(
        &self,
        u: ArrayView2<f64>,
        coords: ArrayView2<f64>,
        dropout_seed: Option<u64>,
    ) -> Result<(Array3<f64>, DeepOnetCache)> {
        self.check_inputs(&u, &coords)?;
        let (b_drop, t_drop) = match dropout_seed {
            Some(s) if self.config.dropout_rate > 0.0 => (
                DropoutSpec::train(self.config.dropout_rate, seed::derive(s, &[0]))?,
                DropoutSpec::train(self.config.dropout_rate, seed::derive(s, &[1]))?,
            ),
            _ => (DropoutSpec::inference(), DropoutSpec::inference()),
        };
        let (branch_out, branch) = self.branch.forward(u, &b_drop)?;
        let (trunk_out, trunk) = self.trunk.forward(coords, &t_drop)?;
        let fused: Vec<Array2<f64>> = (0..self.config.n_params)
            .map(|k| &branch_out * &trunk_out.column(k))
            .collect();
        let out = self.apply_heads(&fused)?;
        Ok((
            out,
            DeepOnetCache {
                branch,
                trunk,
                branch_out,
                trunk_out,
                fused,
            },
        ))
    }

    fn apply_heads(&self, fused: &[Array2<f64>]) -> Result<Array3<f64>> {
        let b = fused[0].nrows();
        let n = self.config.n_points;
        let mut out = Array3::zeros((b, self.config.n_params, n));
        for (k, f) in fused.iter().enumerate() {
            let mut slot = out.slice_mut(s![.., k, ..]);
            if self.heads.is_empty() {
                slot.assign(f);
            } else {
                slot.assign(&self.heads[k].pre_activation(f.view())?);
            }
        }
        Ok(out)
    }

    /// Scaled-space prediction without caching.
    pub fn predict_scaled(&self, u: ArrayView2<f64>, coords: ArrayView2<f64>) -> Result<Array3<f64>> {
        self.check_inputs(&u, &coords)?;
        let branch_out = self.branch.predict(u)?;
        let trunk_out = self.trunk.predict(coords)?;
        let fused: Vec<Array2<f64>> = (0..self.config.n_params)
            .map(|k| &branch_out * &trunk_out.column(k))
            .collect();
        self.apply_heads(&fused)
    }

    /// Physical inputs in, fields out, using the attached scaler and coordinates.
    pub fn predict(&self, inputs: ArrayView2<f64>, space: Space) -> Result<FieldPrediction> {
        let binding = self.binding()?;
        let u = binding.scaler.scale_inputs(inputs);
        let scaled = self.predict_scaled(u.view(), binding.scaled_coords().view())?;
        let values = match space {
            Space::Scaled => scaled,
            Space::Physical => binding.scaler.unscale_fields(&scaled),
        };
        Ok(FieldPrediction { values, space })
    }

    /// Gradients of a loss given `d_out = ∂L/∂output` (`B × P × N`).
    pub fn backward(&self, cache: &DeepOnetCache, d_out: &Array3<f64>) -> Result<DeepOnetGrads> {
        let (b, n) = cache.branch_out.dim();
        if d_out.dim() != (b, self.config.n_params, n) {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output ({b}, {}, {n})",
                d_out.dim(),
                self.config.n_params
            )));
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut d_branch = Array2::<f64>::zeros((b, n));
        let mut d_trunk = Array2::<f64>::zeros((n, self.config.n_params));
        for k in 0..self.config.n_params {
            let delta = d_out.index_axis(Axis(1), k);
            let d_fused = if let Some(head) = self.heads.get(k) {
                heads.push(DenseLayer::param_grads(&cache.fused[k].view(), &delta.to_owned()));
                delta.dot(&head.weights.t())
            } else {
                delta.to_owned()
            };
            let t_k = cache.trunk_out.column(k);
            d_branch.scaled_add(1.0, &(&d_fused * &t_k));
            d_trunk
                .column_mut(k)
                .assign(&(&d_fused * &cache.branch_out).sum_axis(Axis(0)));
        }
        Ok(DeepOnetGrads {
            branch: self.branch.backward(&cache.branch, d_branch.view())?,
            trunk: self.trunk.backward(&cache.trunk, d_trunk.view())?,
            heads,
        })
    }
}

impl Parameters for DeepOnetModel {
    fn param_blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = self
            .branch
            .param_blocks()
            .into_iter()
            .map(|(n, b)| (format!("branch.{n}"), b))
            .chain(self.trunk.param_blocks().into_iter().map(|(n, b)| (format!("trunk.{n}"), b)))
            .collect();
        for (k, h) in self.heads.iter().enumerate() {
            out.push((format!("head.{}.weights", PARAM_NAMES[k]), h.weights.as_slice().expect("standard layout")));
            out.push((format!("head.{}.bias", PARAM_NAMES[k]), h.bias.as_slice().expect("standard layout")));
        }
        out
    }

    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = self
            .branch
            .param_blocks_mut()
            .into_iter()
            .map(|(n, b)| (format!("branch.{n}"), b))
            .chain(
                self.trunk
                    .param_blocks_mut()
                    .into_iter()
                    .map(|(n, b)| (format!("trunk.{n}"), b)),
            )
            .collect();
        for (k, h) in self.heads.iter_mut().enumerate() {
            out.push((
                format!("head.{}.weights", PARAM_NAMES[k]),
                h.weights.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("head.{}.bias", PARAM_NAMES[k]),
                h.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }
}
