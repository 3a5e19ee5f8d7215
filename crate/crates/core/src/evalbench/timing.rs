use std::time::Instant;

use ndarray::arr2;
use serde::{Deserialize, Serialize};

use super::FieldPredictor;
use crate::deeponet::Space;
use crate::error::{Error, Result};

/// Reference wall time of one full-order CFD solve on a 40-core workstation.
pub const FVM_BASELINE_S: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn detect() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu_model,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub v_in: f64,
    pub warmup: usize,
    /// Seconds per timed repetition, in run order.
    pub times_s: Vec<f64>,
    pub median_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub n_points: usize,
    pub environment: Environment,
    pub fvm_baseline_s: f64,
    /// `fvm_baseline_s / median_s`
    pub speedup: f64,
}

/// Wall time of one full-field prediction from a physical inlet velocity,
/// covering input scaling, the forward pass and output unscaling.
pub fn time_inference<P: FieldPredictor + ?Sized>(
    model: &P,
    v_in: f64,
    repetitions: usize,
    warmup: usize,
) -> Result<TimingReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("timing needs at least one repetition".into()));
    }
    if !v_in.is_finite() {
        return Err(Error::InvalidArgument(format!("inlet velocity {v_in} is not finite")));
    }
    let input = arr2(&[[v_in]]);
    for _ in 0..warmup {
        std::hint::black_box(model.predict_fields(input.view(), Space::Physical)?);
    }
    let mut times_s = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(model.predict_fields(input.view(), Space::Physical)?);
        times_s.push(t.elapsed().as_secs_f64());
    }
    let mut sorted = times_s.clone();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len();
    let median_s = if r % 2 == 1 {
        sorted[r / 2]
    } else {
        0.5 * (sorted[r / 2 - 1] + sorted[r / 2])
    };
    Ok(TimingReport {
        v_in,
        warmup,
        mean_s: times_s.iter().sum::<f64>() / r as f64,
        min_s: sorted[0],
        max_s: sorted[r - 1],
        median_s,
        times_s,
        n_points: model.n_points(),
        environment: Environment::detect(),
        fvm_baseline_s: FVM_BASELINE_S,
        speedup: FVM_BASELINE_S / median_s.max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_scaler, testutil::toy, TrainIndices};
    use crate::deeponet::{DataBinding, DeepOnetConfig, DeepOnetModel, InferenceModel};

    fn model() -> InferenceModel {
        let ds = toy(6, 5);
        let scaler = fit_scaler(&ds, &TrainIndices::new_unchecked((0..6).collect())).unwrap();
        let mut m = DeepOnetModel::build(DeepOnetConfig {
            n_input: 1,
            n_points: 5,
            n_params: 3,
            branch_hidden: vec![8],
            trunk_hidden: vec![8],
            with_heads: true,
            dropout_rate: 0.0,
            seed: 1,
        })
        .unwrap();
        m.binding = Some(DataBinding {
            scaler,
            coords: ds.coords.clone(),
            grid: None,
            provenance: serde_json::Value::Null,
        });
        InferenceModel::from_model(m).unwrap()
    }

    #[test]
    fn report_statistics() {
        let r = time_inference(&model(), 0.7, 11, 2).unwrap();
        assert_eq!(r.times_s.len(), 11);
        assert!(r.min_s <= r.median_s && r.median_s <= r.max_s);
        assert!(r.min_s <= r.mean_s && r.mean_s <= r.max_s);
        assert!(r.speedup > 1.0);
        assert_eq!(r.fvm_baseline_s, 200.0);
        assert!(r.environment.threads >= 1);
    }

    #[test]
    fn zero_repetitions_rejected() {
        assert!(matches!(time_inference(&model(), 0.7, 0, 3), Err(Error::InvalidArgument(_))));
        assert!(time_inference(&model(), f64::NAN, 3, 0).is_err());
    }
}
