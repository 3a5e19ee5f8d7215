use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer, LayerGrads};
use super::{Gradients, Parameters};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutMode {
    Train,
    Inference,
}

/// Inverted dropout on hidden-layer outputs. Identity in inference mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: DropoutMode,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn inference() -> Self {
        Self {
            rate: 0.0,
            mode: DropoutMode::Inference,
            seed: 0,
        }
    }

    pub fn train(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            mode: DropoutMode::Train,
            seed,
        })
    }

    fn active(&self) -> bool {
        self.mode == DropoutMode::Train && self.rate > 0.0
    }
}

/// Total parameter count of a dense chain with the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Dense chain: ReLU on hidden layers, linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    // Bumped on every mutable parameter access so stale forward caches are detected.
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediates from [`Mlp::forward`] needed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    /// Input seen by each layer (after dropout of the previous layer's output).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout scale applied to each layer's output, if any.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl Gradients for MlpGrads {
    fn grad_blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for g in &self.layers {
            out.push(g.weights.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

impl Mlp {
    /// Xavier-initialised chain `sizes[0] → … → sizes[last]`.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
        }
        let n = layer_sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                DenseLayer::xavier(
                    layer_sizes[i],
                    layer_sizes[i + 1],
                    act,
                    seed::derive(seed, &[i as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(Error::Config("final MLP layer must be linear".into()));
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Forward pass keeping everything needed for an exact backward pass.
    pub fn forward(
        &self,
        batch: ArrayView2<f64>,
        dropout: &DropoutSpec,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        check_finite_input(&batch)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut rng = seed::rng(dropout.seed);
        let mut x = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(x.view())?;
            let mut a = layer.activation.apply(&z);
            let mask = if i + 1 < n && dropout.active() {
                let keep = 1.0 - dropout.rate;
                let scale = 1.0 / keep;
                let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                a *= &m;
                Some(m)
            } else {
                None
            };
            inputs.push(x);
            pre.push(z);
            masks.push(mask);
            x = a;
        }
        Ok((
            x,
            ForwardCache {
                generation: self.generation,
                inputs,
                pre,
                masks,
            },
        ))
    }

    /// Inference-mode forward pass without caching.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_finite_input(&batch)?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let z = layer.pre_activation(x.view())?;
            x = match layer.activation {
                Activation::Relu => z.mapv_into(|v| if v > 0.0 { v } else { 0.0 }),
                Activation::Linear => z,
            };
        }
        Ok(x)
    }

    /// Parameter gradients given the loss gradient w.r.t. the output.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<MlpGrads> {
        self.check_cache(cache)?;
        let n = self.layers.len();
        let out = &cache.pre[n - 1];
        if upstream.dim() != out.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let mut grads = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if let Some(mask) = &cache.masks[i] {
                delta *= mask;
            }
            layer.activation.backprop(&mut delta, &cache.pre[i]);
            grads.push(DenseLayer::param_grads(&cache.inputs[i].view(), &delta));
            if i > 0 {
                delta = delta.dot(&layer.weights.t());
            }
        }
        grads.reverse();
        Ok(MlpGrads { layers: grads })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::InvalidState(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if cache.pre.len() != self.layers.len()
            || cache
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.ncols() != l.out_dim())
        {
            return Err(Error::InvalidState(
                "forward cache was produced by a different network".into(),
            ));
        }
        Ok(())
    }
}

fn check_finite_input(batch: &ArrayView2<f64>) -> Result<()> {
    if batch.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("MLP input contains non-finite values".into()))
    }
}

impl Parameters for Mlp {
    fn param_blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{i}.weights"), l.weights.as_slice().expect("standard layout")));
            out.push((format!("{i}.bias"), l.bias.as_slice().expect("standard layout")));
        }
        out
    }

    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.generation += 1;
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((
                format!("{i}.weights"),
                l.weights.as_slice_mut().expect("standard layout"),
            ));
            out.push((format!("{i}.bias"), l.bias.as_slice_mut().expect("standard layout")));
        }
        out
    }
}
