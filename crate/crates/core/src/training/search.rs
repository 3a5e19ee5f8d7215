use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataset::{TrainIndices, TrainingData};
use crate::deeponet::DeepOnetModel;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_TRIALS: usize = 50;

/// Sampling ranges. Learning rate and weight decay are log-uniform, dropout is
/// uniform, widths and batch sizes are uniform categorical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub neurons: Vec<usize>,
    pub dropout: (f64, f64),
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    pub weight_decay: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            neurons: vec![128, 256, 512],
            dropout: (0.0, 0.3),
            learning_rate: (1e-5, 1e-3),
            batch_size: vec![16, 32, 64],
            weight_decay: (1e-8, 1e-6),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.neurons.is_empty() || self.batch_size.is_empty() {
            return Err(Error::Config("search space needs at least one width and batch size".into()));
        }
        if self.neurons.iter().any(|&w| w < 2) || self.batch_size.contains(&0) {
            return Err(Error::Config("widths must be ≥ 2 and batch sizes ≥ 1".into()));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.dropout) || self.dropout.0 < 0.0 || self.dropout.1 >= 1.0 {
            return Err(Error::Config("dropout range must lie in [0, 1)".into()));
        }
        for (name, r) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !ordered(r) || r.0 <= 0.0 {
                return Err(Error::Config(format!("{name} range must be positive and ordered")));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TrialConfig {
        let log_uniform = |rng: &mut dyn rand::RngCore, (a, b): (f64, f64)| {
            (a.ln() + (b.ln() - a.ln()) * rng.random::<f64>()).exp().clamp(a, b)
        };
        let neurons = self.neurons[rng.random_range(0..self.neurons.len())];
        let dropout_rate = self.dropout.0 + (self.dropout.1 - self.dropout.0) * rng.random::<f64>();
        let learning_rate = log_uniform(rng, self.learning_rate);
        let batch_size = self.batch_size[rng.random_range(0..self.batch_size.len())];
        let weight_decay = log_uniform(rng, self.weight_decay);
        TrialConfig {
            neurons,
            dropout_rate,
            learning_rate,
            batch_size,
            weight_decay,
        }
    }

    pub fn contains(&self, t: &TrialConfig) -> bool {
        self.neurons.contains(&t.neurons)
            && self.batch_size.contains(&t.batch_size)
            && (self.dropout.0..=self.dropout.1).contains(&t.dropout_rate)
            && (self.learning_rate.0..=self.learning_rate.1).contains(&t.learning_rate)
            && (self.weight_decay.0..=self.weight_decay.1).contains(&t.weight_decay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub neurons: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl TrialConfig {
    /// Branch `[w, w, w]`, trunk `[w, w, w/2]`, other settings from `base`.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let w = self.neurons;
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            dropout_rate: self.dropout_rate,
            branch_hidden: vec![w, w, w],
            trunk_hidden: vec![w, w, w / 2],
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub config: TrialConfig,
    /// `None` when the trial failed (see `error`).
    pub mean_val_loss: Option<f64>,
    pub fold_losses: Vec<f64>,
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrialResult,
    pub trials: Vec<TrialResult>,
}

/// Seeded random search. Each trial trains on 80% of `data` and is scored by
/// its best validation loss on the other 20%; `base` supplies epochs,
/// patience and the init seed. When `log_path` is given every trial is
/// appended there as one JSON line as soon as it finishes.
pub fn hyperparameter_search(
    space: &SearchSpace,
    trials: usize,
    base: &TrainConfig,
    coords: ArrayView2<f64>,
    data: &TrainingData,
    search_seed: u64,
    log_path: Option<&Path>,
) -> Result<SearchResult> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let positions = TrainIndices::new_unchecked((0..data.len()).collect());
    let (fit_idx, val_idx) = positions.holdout(0.8, seed::derive(search_seed, &[1]))?;
    let fit = data.subset(fit_idx.as_slice());
    let val = data.subset(val_idx.as_slice());

    let mut rng = seed::derived_rng(search_seed, &[0]);
    let configs: Vec<TrialConfig> = (0..trials).map(|_| space.sample(&mut rng)).collect();

    let mut log: Option<File> = match log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };

    let mut results = Vec::with_capacity(trials);
    for (t, tc) in configs.into_iter().enumerate() {
        let cfg = tc.apply(base);
        let outcome = DeepOnetModel::build(cfg.model_config(data.inputs.ncols(), data.n_points()))
            .and_then(|m| train(m, coords, &fit, Some(&val), &cfg));
        let result = match outcome {
            Ok((_, h)) => TrialResult {
                trial: t,
                config: tc,
                mean_val_loss: h.best_val_loss,
                fold_losses: h.best_val_loss.into_iter().collect(),
                epochs: h.len(),
                train_loss: h.train_loss(),
                val_loss: h.val_loss(),
                error: None,
            },
            Err(e) if e.is_numeric() => TrialResult {
                trial: t,
                config: tc,
                mean_val_loss: None,
                fold_losses: Vec::new(),
                epochs: 0,
                train_loss: Vec::new(),
                val_loss: Vec::new(),
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        log::info!("trial {}/{trials}: {:?} -> {:?}", t + 1, result.config, result.mean_val_loss);
        if let (Some(f), Some(p)) = (log.as_mut(), log_path) {
            let mut line = serde_json::to_vec(&result)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(p, e))?;
            f.flush().map_err(|e| Error::io(p, e))?;
        }
        results.push(result);
    }

    let best = results
        .iter()
        .filter_map(|r| r.mean_val_loss.map(|l| (l, r)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r)| r.clone())
        .ok_or_else(|| {
            let reasons: Vec<String> = results
                .iter()
                .map(|r| format!("trial {}: {}", r.trial, r.error.as_deref().unwrap_or("no loss")))
                .collect();
            Error::SearchFailed(format!("all {trials} trials failed: {}", reasons.join("; ")))
        })?;
    Ok(SearchResult {
        best,
        trials: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::looping::tests::tiny_problem;

    fn base() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            patience: 5,
            seed: 2,
            ..TrainConfig::tuning()
        }
    }

    fn small_space() -> SearchSpace {
        SearchSpace {
            neurons: vec![4, 8],
            batch_size: vec![2, 4],
            ..Default::default()
        }
    }

    #[test]
    fn samples_stay_in_range() {
        let space = SearchSpace::default();
        let mut rng = seed::rng(1);
        for _ in 0..2000 {
            let t = space.sample(&mut rng);
            assert!(space.contains(&t), "{t:?}");
        }
    }

    #[test]
    fn log_uniform_covers_decades() {
        let space = SearchSpace::default();
        let mut rng = seed::rng(3);
        let below = (0..3000)
            .filter(|_| space.sample(&mut rng).learning_rate < 1e-4)
            .count();
        // half of the log-range lies below 1e-4
        assert!((1300..1700).contains(&below), "{below}");
    }

    #[test]
    fn single_trial_is_best() {
        let (c, data) = tiny_problem(10, 6);
        let r = hyperparameter_search(&small_space(), 1, &base(), c.view(), &data, 5, None).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0]);
        assert_eq!(r.best.fold_losses.len(), 1);
    }

    #[test]
    fn deterministic_and_logged() {
        let (c, data) = tiny_problem(10, 6);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("trials.jsonl");
        let a = hyperparameter_search(&small_space(), 3, &base(), c.view(), &data, 9, Some(&log)).unwrap();
        let b = hyperparameter_search(&small_space(), 3, &base(), c.view(), &data, 9, None).unwrap();
        assert_eq!(a, b);
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<TrialResult> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines, a.trials);
        let best = a.trials.iter().filter_map(|t| t.mean_val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.mean_val_loss, Some(best));
    }

    #[test]
    fn all_diverging_trials_fail_the_search() {
        let (c, mut data) = tiny_problem(10, 6);
        data.targets.fill(f64::NAN);
        let err = hyperparameter_search(&small_space(), 2, &base(), c.view(), &data, 1, None).unwrap_err();
        assert!(matches!(err, Error::SearchFailed(_)));
    }

    #[test]
    fn width_mapping() {
        let t = TrialConfig {
            neurons: 256,
            dropout_rate: 0.1,
            learning_rate: 1e-4,
            batch_size: 32,
            weight_decay: 1e-7,
        };
        let c = t.apply(&base());
        assert_eq!(c.branch_hidden, vec![256; 3]);
        assert_eq!(c.trunk_hidden, vec![256, 256, 128]);
    }
}
