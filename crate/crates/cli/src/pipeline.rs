//! Multi-step workflows shared by the subcommands and the acceptance suite.

use std::fs;
use std::path::Path;

use hotleg_core::dataset::{split_dataset, ScenarioDataset, Split, SplitSpec};
use hotleg_core::deeponet::{checkpoint_save, DeepOnetConfig, DeepOnetModel, InferenceModel};
use hotleg_core::evalbench::{evaluate_model, Evaluation};
use hotleg_core::training::fit;
use hotleg_core::{Error, MetricsReport, Result, Space, TrainConfig, TrainHistory, N_PARAMS, PARAM_NAMES};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::InvalidState(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::InvalidState(format!("cannot create {}: {e}", path.display())))
}

/// Build identity recorded next to every run.
pub fn versions() -> Value {
    serde_json::json!({
        "hotleg": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "debug_assertions": cfg!(debug_assertions),
    })
}

/// One trained model and its evaluation on the untouched test partition.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: DeepOnetModel,
    pub history: TrainHistory,
    pub split_spec: SplitSpec,
    pub split: Split,
    pub evaluation: Evaluation,
}

impl RunOutcome {
    pub fn report(&self) -> &MetricsReport {
        &self.evaluation.report
    }

    /// Write `checkpoint/`, `history.json` and `report.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        checkpoint_save(&self.model, &dir.join("checkpoint"))?;
        write_json(&dir.join("history.json"), &self.history)?;
        write_json(&dir.join("report.json"), self.report())
    }
}

/// Split, train with `cfg`, and evaluate the f32 serving model on the test
/// partition in `space`.
pub fn train_and_evaluate(ds: &ScenarioDataset, spec: &SplitSpec, cfg: &TrainConfig, space: Space) -> Result<RunOutcome> {
    let split = split_dataset(ds.n_scenarios(), spec)?;
    let out = fit(ds, &split, spec, cfg)?;
    let serving = InferenceModel::from_model(out.model.clone())?;
    let evaluation = evaluate_model(&serving, ds, &split.test, space)?;
    Ok(RunOutcome {
        model: out.model,
        history: out.history,
        split_spec: *spec,
        split,
        evaluation,
    })
}

/// Heads-free configuration with the same parameter budget as `cfg`. The
/// trunk is kept; the branch keeps its depth and is widened uniformly to the
/// width whose count is closest to the heads model.
pub fn matched_vanilla(cfg: &TrainConfig, n_input: usize, n_points: usize) -> TrainConfig {
    let heads = TrainConfig {
        with_heads: true,
        ..cfg.clone()
    };
    let target = heads.model_config(n_input, n_points).param_count();
    let depth = cfg.branch_hidden.len().max(1);
    let count = |w: usize| -> usize {
        let mut c = DeepOnetConfig {
            branch_hidden: vec![w; depth],
            with_heads: false,
            ..heads.model_config(n_input, n_points)
        };
        c.dropout_rate = 0.0;
        c.param_count()
    };
    let (mut lo, mut hi) = (1usize, 1usize);
    while count(hi) < target {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = if target - count(lo).min(target) <= count(hi) - target { lo } else { hi };
    TrainConfig {
        branch_hidden: vec![w; depth],
        with_heads: false,
        ..cfg.clone()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub param_count: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub with_heads: bool,
    pub train_time_s: f64,
    pub report: MetricsReport,
}

impl ModelSummary {
    fn of(label: &str, run: &RunOutcome) -> Self {
        let c = &run.model.config;
        Self {
            label: label.into(),
            param_count: run.model.param_count(),
            branch_hidden: c.branch_hidden.clone(),
            trunk_hidden: c.trunk_hidden.clone(),
            with_heads: c.with_heads,
            train_time_s: run.history.wall_time_s(),
            report: run.report().clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub vanilla: ModelSummary,
    pub heads: ModelSummary,
    /// Fields (in `P, V_o, k` order) where the heads model has the lower
    /// average relative L2 error.
    pub heads_better: Vec<bool>,
}

impl AblationReport {
    pub fn heads_wins(&self) -> usize {
        self.heads_better.iter().filter(|&&b| b).count()
    }

    /// MSE and relative L2 per field, average (std) and maximum, one row per
    /// model and field.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} space, {} test scenarios\n{:<22} {:<4} {:>22} {:>10} {:>22} {:>10}\n",
            self.heads.report.space,
            self.heads.report.n_scenarios,
            "model",
            "",
            "MSE avg (std)",
            "MSE max",
            "RelL2 avg (std)",
            "RelL2 max"
        );
        for m in [&self.vanilla, &self.heads] {
            let name = format!("{} ({} params)", m.label, m.param_count);
            for p in &m.report.params {
                s.push_str(&format!(
                    "{:<22} {:<4} {:>10.3e} ({:.2e}) {:>10.3e} {:>10.3e} ({:.2e}) {:>10.3e}\n",
                    name, p.name, p.mse.average, p.mse.std, p.mse.max, p.rel_l2.average, p.rel_l2.std, p.rel_l2.max
                ));
            }
        }
        s
    }
}

/// Train the matched vanilla model on the same split and compare. A finished
/// heads run may be passed in to avoid retraining it.
pub fn ablation(ds: &ScenarioDataset, spec: &SplitSpec, cfg: &TrainConfig, space: Space, heads: Option<&RunOutcome>) -> Result<AblationReport> {
    let heads_cfg = TrainConfig {
        with_heads: true,
        ..cfg.clone()
    };
    let owned;
    let heads = match heads {
        Some(h) if h.split_spec == *spec && h.model.config.with_heads && h.report().space == space => h,
        _ => {
            owned = train_and_evaluate(ds, spec, &heads_cfg, space)?;
            &owned
        }
    };
    let vcfg = matched_vanilla(&heads_cfg, ds.n_input(), ds.n_points());
    log::info!(
        "vanilla comparison: branch {:?}, {} parameters vs {}",
        vcfg.branch_hidden,
        vcfg.model_config(ds.n_input(), ds.n_points()).param_count(),
        heads.model.param_count()
    );
    let vanilla = train_and_evaluate(ds, spec, &vcfg, space)?;
    let heads_better = (0..N_PARAMS)
        .map(|p| heads.report().param(p).rel_l2.average <= vanilla.report().param(p).rel_l2.average)
        .collect();
    Ok(AblationReport {
        vanilla: ModelSummary::of("vanilla", &vanilla),
        heads: ModelSummary::of("heads", heads),
        heads_better,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub train_fraction: f64,
    pub node_step: usize,
    pub n_points: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub baseline_fraction: f64,
    /// Split sweep at full resolution, then the node sweep at the baseline split.
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    pub fn baseline(&self) -> &RobustnessCell {
        self.cells
            .iter()
            .find(|c| c.node_step == 1 && c.train_fraction == self.baseline_fraction)
            .expect("baseline cell is always run")
    }

    /// Largest `|avg / baseline avg − 1|` over cells, fields and metrics.
    pub fn max_relative_deviation(&self) -> f64 {
        let base = &self.baseline().report;
        let mut worst: f64 = 0.0;
        for c in &self.cells {
            for p in 0..N_PARAMS {
                let (a, b) = (c.report.param(p), base.param(p));
                for (x, y) in [
                    (a.mse.average, b.mse.average),
                    (a.mae.average, b.mae.average),
                    (a.rel_l2.average, b.rel_l2.average),
                ] {
                    worst = worst.max((x / y - 1.0).abs());
                }
            }
        }
        worst
    }

    fn table(&self, title: &str, cells: &[&RobustnessCell], key: impl Fn(&RobustnessCell) -> String) -> String {
        let mut s = format!("{title}\n{:<10}", "");
        for name in PARAM_NAMES {
            s.push_str(&format!(" {:>11}", format!("MSE {name}")));
        }
        for name in PARAM_NAMES {
            s.push_str(&format!(" {:>11}", format!("RelL2 {name}")));
        }
        s.push('\n');
        for c in cells {
            s.push_str(&format!("{:<10}", key(c)));
            for p in 0..N_PARAMS {
                s.push_str(&format!(" {:>11.3e}", c.report.param(p).mse.average));
            }
            for p in 0..N_PARAMS {
                s.push_str(&format!(" {:>11.3e}", c.report.param(p).rel_l2.average));
            }
            s.push('\n');
        }
        s
    }

    /// Split table and node-count table.
    pub fn to_tables(&self) -> String {
        let splits: Vec<&RobustnessCell> = self.cells.iter().filter(|c| c.node_step == 1).collect();
        let nodes: Vec<&RobustnessCell> =
            self.cells.iter().filter(|c| c.train_fraction == self.baseline_fraction).collect();
        let pct = |f: f64| format!("{:.0}-{:.0}", f * 100.0, (1.0 - f) * 100.0);
        format!(
            "{}\n{}",
            self.table("train-test split", &splits, |c| pct(c.train_fraction)),
            self.table(&format!("node count ({} split)", pct(self.baseline_fraction)), &nodes, |c| c.n_points.to_string())
        )
    }
}

/// Split sweep at full resolution plus node-count sweep at `baseline_fraction`.
/// A finished baseline run (full resolution, that split) may be passed in.
#[allow(clippy::too_many_arguments)]
pub fn robustness(
    ds: &ScenarioDataset,
    fractions: &[f64],
    node_steps: &[usize],
    baseline_fraction: f64,
    split_seed: u64,
    cfg: &TrainConfig,
    space: Space,
    baseline: Option<&RunOutcome>,
) -> Result<RobustnessReport> {
    let mut plan: Vec<(f64, usize)> = Vec::new();
    for &f in fractions.iter().chain(std::iter::once(&baseline_fraction)) {
        if !plan.contains(&(f, 1)) {
            plan.push((f, 1));
        }
    }
    for &s in node_steps {
        if s == 0 {
            return Err(Error::InvalidArgument("node step must be ≥ 1".into()));
        }
        if !plan.contains(&(baseline_fraction, s)) {
            plan.push((baseline_fraction, s));
        }
    }
    let mut cells = Vec::with_capacity(plan.len());
    for (f, step) in plan {
        let spec = SplitSpec::new(f, split_seed);
        let reuse = baseline.filter(|b| {
            step == 1 && b.split_spec == spec && b.model.n_points() == ds.n_points() && b.report().space == space
        });
        let (report, n_train, n_test, n_points) = match reuse {
            Some(b) => (b.report().clone(), b.split.train.len(), b.split.test.len(), ds.n_points()),
            None => {
                let sub;
                let data = if step == 1 {
                    ds
                } else {
                    sub = ds.subsample_nodes(step)?;
                    &sub
                };
                log::info!("robustness: split {f}, {} nodes", data.n_points());
                let run = train_and_evaluate(data, &spec, cfg, space)?;
                (run.report().clone(), run.split.train.len(), run.split.test.len(), data.n_points())
            }
        };
        cells.push(RobustnessCell {
            train_fraction: f,
            node_step: step,
            n_points,
            n_train,
            n_test,
            report,
        });
    }
    Ok(RobustnessReport {
        baseline_fraction,
        cells,
    })
}
