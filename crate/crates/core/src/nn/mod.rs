//! Dense feedforward primitives with exact backpropagation.
//!
//! Weights are stored `in_dim × out_dim` so a batch `X (B × in)` maps to
//! `X·W + b (B × out)`. All training math is `f64`.

mod adam;
mod gradcheck;
mod layer;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, finite_diff_check, GradCheckReport, MAX_GRADCHECK_PARAMS};
pub use layer::{xavier_bound, xavier_init, Activation, DenseLayer, LayerGrads};
pub use mlp::{param_count, DropoutMode, DropoutSpec, ForwardCache, Mlp, MlpGrads};

/// Anything whose trainable parameters can be exposed as flat named blocks.
///
/// The block order must be stable: optimizers and gradient containers rely on it.
pub trait Parameters {
    fn param_blocks(&self) -> Vec<(String, &[f64])>;
    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.param_blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Gradients laid out in the same block order as the matching [`Parameters`].
pub trait Gradients {
    fn grad_blocks(&self) -> Vec<&[f64]>;

    fn to_flat_blocks(&self) -> Vec<Vec<f64>> {
        self.grad_blocks().into_iter().map(<[f64]>::to_vec).collect()
    }
}
