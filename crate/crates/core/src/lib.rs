//! Operator-learning toolkit for coolant-flow virtual sensors in a scaled elbow pipe.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers, exact backpropagation, Xavier init, Adam with coupled L2.
//! - [`deeponet`]: branch/trunk operator network with optional per-parameter linear
//!   heads, checkpoint format, and a frozen 32-bit inference engine.
//! - [`dataset`]: scenario datasets, min-max scaling, splits, k-fold, on-disk format,
//!   delimited-table import.
//! - [`flowgen`]: analytic elbow-flow field generator used in place of a CFD solver.
//! - [`training`]: mini-batch training with early stopping, cross-validation and
//!   seeded random hyperparameter search.
//! - [`evalbench`]: MSE / MAE / relative L2 metrics, reports, timing and artifact export.
//!
//! Field tensors always use the parameter order `[P, V_o, k]`.

pub mod dataset;
pub mod deeponet;
pub mod error;
pub mod evalbench;
pub mod flowgen;
pub mod nn;
pub mod seed;
pub mod training;

pub use dataset::{ScalerParams, ScenarioDataset, SplitSpec};
pub use deeponet::{DeepOnetConfig, DeepOnetModel, FieldPrediction, InferenceModel, Space};
pub use error::{Error, Result};
pub use evalbench::{MetricsReport, ScenarioMetrics, TimingReport};
pub use training::{TrainConfig, TrainHistory};

/// Number of predicted output fields.
pub const N_PARAMS: usize = 3;

/// Names of the predicted fields, in tensor order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["P", "V_o", "k"];
