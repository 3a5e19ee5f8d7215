//! Branch/trunk operator network with optional per-parameter linear heads.
//!
//! Shapes for a batch of `B` scenarios over `N` nodes and `P = 3` fields:
//!
//! ```text
//! branch(u)      : B × N
//! trunk(coords)  : N × P
//! fused[b][k][i] = branch[b][i] · trunk[i][k]
//! head_k         : z_k = fused_k · W_k + c_k      (W_k is N × N)
//! output         : B × P × N  (scaled space)
//! ```

mod checkpoint;
mod inference;
mod model;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, read_header, BlobSection, CheckpointHeader,
    CHECKPOINT_FORMAT_VERSION, HEADER_FILE, WEIGHTS_FILE,
};
pub use inference::InferenceModel;
pub use model::{
    fuse, DataBinding, DeepOnetCache, DeepOnetConfig, DeepOnetGrads, DeepOnetModel,
    FieldPrediction, Space,
};
