//! Mini-batch training with early stopping, k-fold cross-validation, seeded
//! random hyperparameter search and a dataset-level `fit` driver.

mod cv;
mod fit;
mod looping;
mod search;

use serde::{Deserialize, Serialize};

use crate::deeponet::DeepOnetConfig;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::N_PARAMS;

pub use cv::{cross_validate, CvReport};
pub use fit::{fit, FitOutcome};
pub use looping::{evaluate_loss, mse_loss, train, train_with_validator, EARLY_STOP_MIN_DELTA};
pub use search::{
    hyperparameter_search, SearchResult, SearchSpace, TrialConfig, TrialResult, DEFAULT_TRIALS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
    pub seed: u64,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    #[serde(default = "yes")]
    pub with_heads: bool,
    /// Share of the training partition held out for validation by [`fit`];
    /// 0 trains on all of it.
    #[serde(default)]
    pub validation_fraction: f64,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Final-phase settings: 1000 epochs on the whole training partition,
    /// lr 1e-3, weight decay 1e-8, no dropout, no early stopping.
    pub fn final_phase() -> Self {
        Self {
            epochs: 1000,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-8,
            dropout_rate: 0.0,
            patience: 0,
            seed: 0,
            branch_hidden: vec![512, 512, 512],
            trunk_hidden: vec![512, 512, 256],
            with_heads: true,
            validation_fraction: 0.0,
        }
    }

    /// Final-phase settings shortened to 300 epochs with batch 64 for a
    /// single-machine CPU run.
    pub fn desk() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            ..Self::final_phase()
        }
    }

    /// Tuning-phase settings: 100 epochs, patience 5, 80/20 holdout, best
    /// sampled values from the reference search.
    pub fn tuning() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.00098,
            weight_decay: 1.53625e-8,
            dropout_rate: 0.0013836,
            patience: 5,
            validation_fraction: 0.2,
            ..Self::final_phase()
        }
    }

    /// `desk`, `final` or `tuning`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "final" => Ok(Self::final_phase()),
            "tuning" => Ok(Self::tuning()),
            other => Err(Error::Config(format!(
                "unknown training preset `{other}` (expected desk, final or tuning)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }

    /// Network configuration for `n_input` inputs and `n_points` nodes.
    pub fn model_config(&self, n_input: usize, n_points: usize) -> DeepOnetConfig {
        DeepOnetConfig {
            n_input,
            n_points,
            n_params: N_PARAMS,
            branch_hidden: self.branch_hidden.clone(),
            trunk_hidden: self.trunk_hidden.clone(),
            with_heads: self.with_heads,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Inference-mode loss of the end-of-epoch parameters on the whole
    /// training set; recorded only when there is no validator.
    #[serde(default)]
    pub fit_loss: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    #[serde(default)]
    pub best_fit_loss: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn train_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_loss(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.val_loss).collect()
    }

    pub fn fit_loss(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.fit_loss).collect()
    }

    pub fn wall_time_s(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_time_s).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_distinct() {
        for name in ["desk", "final", "tuning"] {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        let f = TrainConfig::final_phase();
        assert_eq!((f.epochs, f.learning_rate, f.weight_decay, f.dropout_rate), (1000, 1e-3, 1e-8, 0.0));
        assert_eq!(f.patience, 0);
        let t = TrainConfig::tuning();
        assert_eq!((t.epochs, t.patience), (100, 5));
        assert!(TrainConfig::preset("fast").is_err());
    }

    #[test]
    fn rejects_invalid() {
        let bad = TrainConfig { epochs: 0, ..TrainConfig::desk() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { dropout_rate: 1.0, ..TrainConfig::desk() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(TrainConfig::desk()).unwrap();
        v["momentum"] = serde_json::json!(0.9);
        assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    }
}
