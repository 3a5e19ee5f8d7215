use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub(crate) fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Linear => pre.clone(),
        }
    }

    /// Multiply `delta` in place by the activation derivative at `pre`.
    /// The ReLU subgradient at exactly zero is taken as 0.
    pub(crate) fn backprop(self, delta: &mut Array2<f64>, pre: &Array2<f64>) {
        if let Activation::Relu = self {
            ndarray::Zip::from(delta).and(pre).for_each(|d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
        }
    }
}

/// Half-width of the Glorot-uniform interval, `sqrt(6 / (in + out))`.
pub fn xavier_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

/// Glorot-uniform `in_dim × out_dim` matrix, deterministic in `seed`.
pub fn xavier_init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Array2<f64>> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "xavier_init needs positive dimensions, got {in_dim}×{out_dim}"
        )));
    }
    let bound = xavier_bound(in_dim, out_dim);
    let mut rng = seed::rng(seed);
    Ok(Array2::from_shape_simple_fn((in_dim, out_dim), || {
        bound * (2.0 * rng.random::<f64>() - 1.0)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Xavier-uniform weights, zero bias.
    pub fn xavier(in_dim: usize, out_dim: usize, activation: Activation, seed: u64) -> Result<Self> {
        Ok(Self {
            weights: xavier_init(in_dim, out_dim, seed)?,
            bias: Array1::zeros(out_dim),
            activation,
        })
    }

    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "layer weights are {}×{} but bias has length {}",
                weights.nrows(),
                weights.ncols(),
                bias.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Affine part `X·W + b`.
    pub fn pre_activation(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects input width {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        Ok(z)
    }

    /// Gradients of a linear map given its input and the gradient at its output.
    pub(crate) fn param_grads(input: &ArrayView2<f64>, delta: &Array2<f64>) -> LayerGrads {
        LayerGrads {
            weights: input.t().dot(delta).as_standard_layout().into_owned(),
            bias: delta.sum_axis(Axis(0)),
        }
    }
}
