//! Error metrics, per-scenario aggregation, evaluation reports, inference
//! timing and artifact export.
//!
//! Metrics default to scaled space: every channel min-max scaled with the
//! training-partition ranges. Reports always carry their space label.

mod export;
mod timing;

use ndarray::{s, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{split_dataset, ScalerParams, ScenarioDataset, SplitSpec, TestIndices};
use crate::deeponet::{DeepOnetModel, InferenceModel, Space};
use crate::error::{Error, Result};
use crate::{N_PARAMS, PARAM_NAMES};

pub use export::{export_artifacts, histogram, select_scenarios, ExportSummary, Histogram, HISTOGRAM_BINS, SELECTION_QUANTILES};
pub use timing::{time_inference, Environment, TimingReport, FVM_BASELINE_S};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub mse: f64,
    pub mae: f64,
    pub rel_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    /// Scenario index in the parent dataset.
    pub scenario: usize,
    pub input: Vec<f64>,
    /// `[P, V_o, k]`
    pub params: [ParamMetrics; N_PARAMS],
}

/// MSE, MAE and relative L2 per field over the `N` nodes of one scenario.
/// `truth` and `pred` are `3 × N`.
pub fn scenario_metrics(truth: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<[ParamMetrics; N_PARAMS]> {
    if truth.dim() != pred.dim() || truth.nrows() != N_PARAMS {
        return Err(Error::Shape(format!(
            "truth {:?} and prediction {:?} must both be 3 × N",
            truth.dim(),
            pred.dim()
        )));
    }
    let n = truth.ncols() as f64;
    let mut out = [ParamMetrics::default(); N_PARAMS];
    for (p, slot) in out.iter_mut().enumerate() {
        let (mut se, mut ae, mut yy) = (0.0, 0.0, 0.0);
        for (&y, &yh) in truth.row(p).iter().zip(pred.row(p)) {
            let e = y - yh;
            se += e * e;
            ae += e.abs();
            yy += y * y;
        }
        if yy == 0.0 {
            return Err(Error::UndefinedMetric {
                metric: "rel_l2",
                parameter: PARAM_NAMES[p],
                reason: "ground truth has zero norm".into(),
            });
        }
        *slot = ParamMetrics {
            mse: se / n,
            mae: ae / n,
            rel_l2: se.sqrt() / yy.sqrt(),
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub average: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let average = values.clone().sum::<f64>() / n;
        let std = (values.clone().map(|v| (v - average).powi(2)).sum::<f64>() / n).sqrt();
        let max = values.fold(f64::NEG_INFINITY, f64::max);
        Self { average, std, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    pub mse: Stat,
    pub mae: Stat,
    pub rel_l2: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub space: Space,
    pub n_scenarios: usize,
    /// `[P, V_o, k]`
    pub params: Vec<ParamReport>,
}

impl MetricsReport {
    pub fn param(&self, p: usize) -> &ParamReport {
        &self.params[p]
    }

    /// Plain-text table, one row per field.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} scenarios, {} space\n{:<4} {:>22} {:>10} {:>22} {:>10} {:>10}\n",
            self.n_scenarios, self.space, "", "MSE avg (std)", "MSE max", "RelL2 avg (std)", "RelL2 max", "MAE avg"
        );
        for p in &self.params {
            out.push_str(&format!(
                "{:<4} {:>10.4e} ({:.3e}) {:>10.4e} {:>10.4e} ({:.3e}) {:>10.4e} {:>10.4e}\n",
                p.name, p.mse.average, p.mse.std, p.mse.max, p.rel_l2.average, p.rel_l2.std, p.rel_l2.max, p.mae.average
            ));
        }
        out
    }
}

/// Mean, population std and max of every metric over the scenarios.
pub fn aggregate_metrics(list: &[ScenarioMetrics], space: Space) -> Result<MetricsReport> {
    if list.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero scenarios".into()));
    }
    let params = (0..N_PARAMS)
        .map(|p| ParamReport {
            name: PARAM_NAMES[p].to_string(),
            mse: Stat::of(list.iter().map(move |m| m.params[p].mse)),
            mae: Stat::of(list.iter().map(move |m| m.params[p].mae)),
            rel_l2: Stat::of(list.iter().map(move |m| m.params[p].rel_l2)),
        })
        .collect();
    Ok(MetricsReport {
        space,
        n_scenarios: list.len(),
        params,
    })
}

/// Anything that maps physical inputs to `B × 3 × N` fields.
pub trait FieldPredictor {
    fn n_points(&self) -> usize;
    fn scaler(&self) -> Result<&ScalerParams>;
    fn predict_fields(&self, inputs: ArrayView2<f64>, space: Space) -> Result<Array3<f64>>;
}

impl FieldPredictor for DeepOnetModel {
    fn n_points(&self) -> usize {
        self.config.n_points
    }

    fn scaler(&self) -> Result<&ScalerParams> {
        Ok(&self.binding()?.scaler)
    }

    fn predict_fields(&self, inputs: ArrayView2<f64>, space: Space) -> Result<Array3<f64>> {
        Ok(self.predict(inputs, space)?.values)
    }
}

impl FieldPredictor for InferenceModel {
    fn n_points(&self) -> usize {
        self.config().n_points
    }

    fn scaler(&self) -> Result<&ScalerParams> {
        Ok(&self.binding().scaler)
    }

    fn predict_fields(&self, inputs: ArrayView2<f64>, space: Space) -> Result<Array3<f64>> {
        Ok(self.predict(inputs, space)?.values)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub per_scenario: Vec<ScenarioMetrics>,
    /// Physical-space predictions, test order, `M_test × 3 × N`.
    pub predictions: Array3<f64>,
    /// Physical-space ground truth, same layout.
    pub truth: Array3<f64>,
}

const EVAL_CHUNK: usize = 64;

/// Evaluate on the scenarios listed in `test`, with metrics in `space`.
pub fn evaluate_model<P: FieldPredictor + ?Sized>(
    model: &P,
    ds: &ScenarioDataset,
    test: &TestIndices,
    space: Space,
) -> Result<Evaluation> {
    if model.n_points() != ds.n_points() {
        return Err(Error::Shape(format!(
            "model predicts {} nodes, dataset has {}",
            model.n_points(),
            ds.n_points()
        )));
    }
    let idx = test.as_slice();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty test partition".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= ds.n_scenarios()) {
        return Err(Error::InvalidArgument(format!("scenario {bad} is out of range")));
    }
    let scaler = model.scaler()?;
    let inputs = ds.inputs.select(Axis(0), idx);
    let truth = ds.fields.select(Axis(0), idx);
    let mut predictions = Array3::zeros(truth.dim());
    for start in (0..idx.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(idx.len());
        let pred = model.predict_fields(inputs.slice(s![start..end, ..]), Space::Physical)?;
        predictions.slice_mut(s![start..end, .., ..]).assign(&pred);
    }
    let (t_cmp, p_cmp) = match space {
        Space::Physical => (truth.clone(), predictions.clone()),
        Space::Scaled => (scaler.scale_fields(&truth), scaler.scale_fields(&predictions)),
    };
    let per_scenario = idx
        .iter()
        .enumerate()
        .map(|(pos, &j)| {
            Ok(ScenarioMetrics {
                scenario: j,
                input: inputs.row(pos).to_vec(),
                params: scenario_metrics(t_cmp.index_axis(Axis(0), pos), p_cmp.index_axis(Axis(0), pos))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: aggregate_metrics(&per_scenario, space)?,
        per_scenario,
        predictions,
        truth,
    })
}

/// Check that `test` is disjoint from the training partition recorded in a
/// model's provenance. Returns `Ok(false)` when the dataset differs from the
/// one trained on (nothing to check), `Ok(true)` when verified.
pub fn verify_untouched(provenance: &serde_json::Value, ds: &ScenarioDataset, test: &TestIndices) -> Result<bool> {
    let Some(sha) = provenance.get("dataset_sha256").and_then(|v| v.as_str()) else {
        return Ok(false);
    };
    if sha != ds.content_digest() {
        return Ok(false);
    }
    let spec: SplitSpec = serde_json::from_value(
        provenance
            .get("split")
            .cloned()
            .ok_or_else(|| Error::InvalidState("provenance records a dataset but no split".into()))?,
    )?;
    let split = split_dataset(ds.n_scenarios(), &spec)?;
    let train = split.train.as_slice();
    if let Some(j) = test.as_slice().iter().find(|j| train.binary_search(j).is_ok()) {
        return Err(Error::InvalidState(format!(
            "scenario {j} of the evaluation set was used for training"
        )));
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;

    #[test]
    fn identity_and_zero_predictor() {
        let y = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5], [1e-3, 2e-3, 0.0]];
        for m in scenario_metrics(y.view(), y.view()).unwrap() {
            assert_eq!((m.mse, m.mae, m.rel_l2), (0.0, 0.0, 0.0));
        }
        for m in scenario_metrics(y.view(), Array2::zeros((3, 3)).view()).unwrap() {
            assert_eq!(m.rel_l2, 1.0);
        }
    }

    #[test]
    fn hand_example() {
        let y = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let yh = array![[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let m = scenario_metrics(y.view(), yh.view()).unwrap()[0];
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.mae, 1.0);
        assert!((m.rel_l2 - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_truth_is_undefined() {
        let mut y = Array2::ones((3, 4));
        y.row_mut(1).fill(0.0);
        let err = scenario_metrics(y.view(), y.view()).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric { parameter: "V_o", .. }));
    }

    #[test]
    fn mae_squared_bounded_by_mse() {
        let mut rng = crate::seed::rng(11);
        for _ in 0..200 {
            let y = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0..1.0));
            let yh = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0..1.0));
            for m in scenario_metrics(y.view(), yh.view()).unwrap() {
                assert!(m.mae * m.mae <= m.mse * (1.0 + 1e-12));
            }
        }
    }

    fn sm(mse: f64) -> ScenarioMetrics {
        ScenarioMetrics {
            scenario: 0,
            input: vec![0.7],
            params: [ParamMetrics { mse, mae: mse, rel_l2: mse }; 3],
        }
    }

    #[test]
    fn aggregation_examples() {
        let r = aggregate_metrics(&[sm(0.5)], Space::Scaled).unwrap();
        assert_eq!(r.param(0).mse, Stat { average: 0.5, std: 0.0, max: 0.5 });
        let r = aggregate_metrics(&[sm(0.0002), sm(0.0004)], Space::Scaled).unwrap();
        assert!((r.param(0).mse.average - 0.0003).abs() < 1e-18);
        assert_eq!(r.param(0).mse.max, 0.0004);
        assert!((r.param(0).mse.std - 0.0001).abs() < 1e-18);
        assert_eq!(r.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["P", "V_o", "k"]);
        assert!(aggregate_metrics(&[], Space::Scaled).is_err());
        assert!(r.to_table().contains("V_o"));
    }

    struct Oracle<'a>(&'a ScenarioDataset, ScalerParams);

    impl FieldPredictor for Oracle<'_> {
        fn n_points(&self) -> usize {
            self.0.n_points()
        }
        fn scaler(&self) -> Result<&ScalerParams> {
            Ok(&self.1)
        }
        fn predict_fields(&self, inputs: ArrayView2<f64>, _space: Space) -> Result<Array3<f64>> {
            let rows: Vec<usize> = inputs
                .rows()
                .into_iter()
                .map(|r| (0..self.0.n_scenarios()).find(|&j| self.0.inputs[[j, 0]] == r[0]).unwrap())
                .collect();
            Ok(self.0.fields.select(Axis(0), &rows))
        }
    }

    #[test]
    fn oracle_injection_scores_zero() {
        let ds = crate::dataset::testutil::toy(12, 5);
        let split = split_dataset(12, &SplitSpec::new(0.75, 1)).unwrap();
        let scaler = crate::dataset::fit_scaler(&ds, &split.train).unwrap();
        for space in [Space::Scaled, Space::Physical] {
            let ev = evaluate_model(&Oracle(&ds, scaler.clone()), &ds, &split.test, space).unwrap();
            assert_eq!(ev.per_scenario.len(), split.test.len());
            assert_eq!(ev.report.space, space);
            for p in &ev.report.params {
                assert_eq!((p.mse.max, p.mae.max, p.rel_l2.max), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn untouched_check() {
        let ds = crate::dataset::testutil::toy(10, 4);
        let spec = SplitSpec::new(0.8, 3);
        let split = split_dataset(10, &spec).unwrap();
        let prov = serde_json::json!({"dataset_sha256": ds.content_digest(), "split": spec});
        assert!(verify_untouched(&prov, &ds, &split.test).unwrap());
        let leaked = TestIndices::new_unchecked(split.train.as_slice().to_vec());
        assert!(matches!(verify_untouched(&prov, &ds, &leaked), Err(Error::InvalidState(_))));
        let other = serde_json::json!({"dataset_sha256": "00", "split": spec});
        assert!(!verify_untouched(&other, &ds, &split.test).unwrap());
    }
}
