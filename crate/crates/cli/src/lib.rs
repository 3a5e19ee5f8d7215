//! `hotleg` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numeric failure. Every failure also prints one JSON object on stderr.
//!
//! Environment overrides: `HOTLEG_OUT_DIR` is the parent of default run
//! directories, `HOTLEG_THREADS` sets the server's worker thread count.

pub mod config;
pub mod pipeline;
pub mod serve;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hotleg_core::dataset::{load_dataset, save_dataset, split_dataset, SplitSpec, TestIndices, TrainingData};
use hotleg_core::deeponet::InferenceModel;
use hotleg_core::evalbench::{evaluate_model, export_artifacts, time_inference, verify_untouched};
use hotleg_core::flowgen::{field_extrema, generate_dataset};
use hotleg_core::training::{cross_validate, hyperparameter_search};
use hotleg_core::{dataset::fit_scaler, Error, Space};
use serde_json::{json, Value};

use config::{EffectiveConfig, Scale};
use pipeline::{create_dir, versions, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hotleg", version, about = "DeepONet virtual sensor for elbow-pipe coolant fields")]
pub struct Cli {
    /// JSON run configuration; every section and field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Problem size used for defaults not given in the config file.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub scale: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Run directory [default: $HOTLEG_OUT_DIR/<command> or runs/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a surrogate dataset.
    GenData {
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train on the training partition; writes checkpoint, history and test report.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// desk, final or tuning
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Random hyperparameter search on the training partition.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the epoch budget of every trial.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// k-fold cross-validation on the training partition.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint; exports metric tables, histograms and heatmaps.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        space: Option<Space>,
        /// Evaluate every scenario of a dataset the model was not trained on.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        no_export: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Time single-scenario inference.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        v_in: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Predict the fields for one inlet velocity; prints JSON.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        v_in: f64,
        #[arg(long)]
        space: Option<Space>,
    },
    /// Serve a checkpoint over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        max_concurrent: Option<usize>,
        #[arg(long)]
        space: Option<Space>,
    },
    /// Heads model against a heads-free model with the same parameter budget.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Split-fraction and node-count sweeps.
    Robustness {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.8, 0.9])]
        splits: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 4])]
        node_steps: Vec<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Tune { .. } => "tune",
            Command::Cv { .. } => "cv",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Infer { .. } => "infer",
            Command::Serve { .. } => "serve",
            Command::Ablate { .. } => "ablate",
            Command::Robustness { .. } => "robustness",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        json!({"error": {"kind": kind, "message": message, "exit_code": self.exit_code()}})
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(summary) => {
            if !summary.is_null() {
                println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            }
            EXIT_OK
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> CliResult<EffectiveConfig> {
    let mut doc = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    if let Some(scale) = &cli.scale {
        match doc.as_object_mut() {
            Some(m) => {
                m.insert("scale".into(), json!(scale));
            }
            None => return Err(Error::Config("config must be a JSON object".into()).into()),
        }
    }
    let cfg = EffectiveConfig::from_value(&doc)?;
    if cfg.scale == Scale::Paper {
        log::warn!(
            "paper scale: the heads alone need {:.1} GB in f32 (about twice that while training in f64) and training takes days on a CPU",
            cfg.head_bytes_f32() as f64 / 1e9
        );
    }
    Ok(cfg)
}

fn out_dir(out: &OutArg, command: &str) -> PathBuf {
    out.out.clone().unwrap_or_else(|| {
        std::env::var_os("HOTLEG_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command)
    })
}

/// Create the run directory and record the effective config and build info.
fn start_run(dir: &Path, cfg: &EffectiveConfig) -> CliResult<()> {
    create_dir(dir)?;
    write_json(&dir.join("effective_config.json"), cfg)?;
    Ok(())
}

fn finish_run(dir: &Path, command: &str, cfg: &EffectiveConfig, extra: Value, started: Instant) -> CliResult<()> {
    let mut meta = json!({
        "command": command,
        "effective_config": cfg,
        "seeds": {
            "dataset": cfg.dataset.seed,
            "split": cfg.dataset.split_seed,
            "train": cfg.train.seed,
            "search": cfg.search.seed,
        },
        "versions": versions(),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    if let (Some(m), Value::Object(x)) = (meta.as_object_mut(), extra) {
        m.extend(x);
    }
    write_json(&dir.join("run.json"), &meta)?;
    Ok(())
}

fn apply_data_args(cfg: &mut EffectiveConfig, a: &DataArgs) -> CliResult<SplitSpec> {
    if let Some(f) = a.train_fraction {
        cfg.dataset.train_fraction = f;
    }
    if let Some(s) = a.split_seed {
        cfg.dataset.split_seed = s;
    }
    cfg.validate()?;
    Ok(SplitSpec::new(cfg.dataset.train_fraction, cfg.dataset.split_seed))
}

fn threads() -> CliResult<usize> {
    match std::env::var("HOTLEG_THREADS") {
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("HOTLEG_THREADS must be a positive integer, got `{s}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn execute(cli: Cli) -> CliResult<Value> {
    let mut cfg = resolve_config(&cli)?;
    let started = Instant::now();
    let name = cli.command.name();
    match cli.command {
        Command::GenData { scenarios, seed, out } => {
            if let Some(m) = scenarios {
                cfg.dataset.scenarios = m;
            }
            if let Some(s) = seed {
                cfg.dataset.seed = s;
            }
            cfg.validate()?;
            let dir = out_dir(&out, name);
            start_run(&dir, &cfg)?;
            let d = &cfg.dataset;
            let ds = generate_dataset(d.scenarios, (d.v_min, d.v_max), &cfg.geometry, &cfg.fluid, &cfg.surrogate, d.seed)?;
            let manifest = save_dataset(&ds, &dir)?;
            let extrema = field_extrema(&cfg.geometry, &cfg.fluid, &cfg.surrogate, (d.v_min, d.v_max))?;
            let summary = json!({
                "dataset": dir,
                "n_scenarios": manifest.n_scenarios,
                "n_points": manifest.n_points,
                "content_sha256": manifest.content_sha256,
                "field_extrema": extrema,
            });
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": manifest.content_sha256}), started)?;
            Ok(summary)
        }
        Command::Train { data, preset, epochs, seed } => {
            if let Some(p) = preset {
                let base = hotleg_core::TrainConfig::preset(&p)?;
                cfg.train = hotleg_core::TrainConfig {
                    seed: cfg.train.seed,
                    branch_hidden: cfg.train.branch_hidden.clone(),
                    trunk_hidden: cfg.train.trunk_hidden.clone(),
                    with_heads: cfg.train.with_heads,
                    ..base
                };
                cfg.train_preset = p;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let spec = apply_data_args(&mut cfg, &data)?;
            let dir = out_dir(&data.out, name);
            start_run(&dir, &cfg)?;
            let ds = load_dataset(&data.data)?;
            let run = pipeline::train_and_evaluate(&ds, &spec, &cfg.train, cfg.eval.space)?;
            run.save(&dir)?;
            let summary = json!({
                "checkpoint": dir.join("checkpoint"),
                "epochs": run.history.len(),
                "best_epoch": run.history.best_epoch,
                "final_train_loss": run.history.train_loss().last(),
                "train_time_s": run.history.wall_time_s(),
                "test_rel_l2": run.report().params.iter().map(|p| (p.name.clone(), json!(p.rel_l2.average))).collect::<serde_json::Map<_, _>>(),
                "space": run.report().space,
            });
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": ds.content_digest(), "split": spec}), started)?;
            Ok(summary)
        }
        Command::Tune { data, trials, seed, epochs } => {
            if let Some(t) = trials {
                cfg.search.trials = t;
            }
            if let Some(s) = seed {
                cfg.search.seed = s;
            }
            let spec = apply_data_args(&mut cfg, &data)?;
            let dir = out_dir(&data.out, name);
            start_run(&dir, &cfg)?;
            let ds = load_dataset(&data.data)?;
            let split = split_dataset(ds.n_scenarios(), &spec)?;
            let scaler = fit_scaler(&ds, &split.train)?;
            let set = TrainingData::from_partition(&ds, &split.train, &scaler)?;
            let coords = scaler.scale_coords(ds.coords.view());
            let mut base = cfg.search_base();
            if let Some(e) = epochs {
                base.epochs = e;
            }
            let log_path = dir.join("trials.jsonl");
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| Error::InvalidState(format!("cannot reset trial log: {e}")))?;
            }
            let result = hyperparameter_search(
                &cfg.search.space,
                cfg.search.trials,
                &base,
                coords.view(),
                &set,
                cfg.search.seed,
                Some(&log_path),
            )?;
            write_json(&dir.join("search.json"), &result)?;
            let best = &result.best;
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": ds.content_digest(), "split": spec}), started)?;
            Ok(json!({"trials": result.trials.len(), "best": best, "log": log_path}))
        }
        Command::Cv { data, folds, epochs } => {
            if let Some(k) = folds {
                cfg.search.folds = k;
            }
            let spec = apply_data_args(&mut cfg, &data)?;
            let dir = out_dir(&data.out, name);
            start_run(&dir, &cfg)?;
            let ds = load_dataset(&data.data)?;
            let split = split_dataset(ds.n_scenarios(), &spec)?;
            let scaler = fit_scaler(&ds, &split.train)?;
            let set = TrainingData::from_partition(&ds, &split.train, &scaler)?;
            let coords = scaler.scale_coords(ds.coords.view());
            let mut tc = cfg.search_base();
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let report = cross_validate(
                &tc.model_config(ds.n_input(), ds.n_points()),
                coords.view(),
                &set,
                &tc,
                cfg.search.folds,
            )?;
            write_json(&dir.join("cv.json"), &report)?;
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": ds.content_digest(), "split": spec}), started)?;
            Ok(serde_json::to_value(&report).map_err(Error::from)?)
        }
        Command::Eval { checkpoint, data, space, all, no_export, out } => {
            if let Some(s) = space {
                cfg.eval.space = s;
            }
            let dir = out_dir(&out, name);
            start_run(&dir, &cfg)?;
            let model = InferenceModel::from_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let prov = &model.binding().provenance;
            let same_dataset = prov.get("dataset_sha256").and_then(Value::as_str) == Some(ds.content_digest().as_str());
            let test = if all {
                if same_dataset {
                    return Err(Error::InvalidState(
                        "--all on the dataset the model was trained on would score training scenarios".into(),
                    )
                    .into());
                }
                TestIndices::new_unchecked((0..ds.n_scenarios()).collect())
            } else {
                if !same_dataset {
                    return Err(Error::InvalidState(
                        "dataset checksum differs from the one the model was trained on; pass --all to evaluate every scenario".into(),
                    )
                    .into());
                }
                let spec: SplitSpec = serde_json::from_value(prov["split"].clone()).map_err(Error::from)?;
                split_dataset(ds.n_scenarios(), &spec)?.test
            };
            let verified = verify_untouched(prov, &ds, &test)?;
            let ev = evaluate_model(&model, &ds, &test, cfg.eval.space)?;
            write_json(&dir.join("report.json"), &ev.report)?;
            let mut files = vec![];
            if cfg.eval.export && !no_export {
                files = export_artifacts(&ev, model.coords().view(), model.grid(), &dir)?.files;
            }
            eprintln!("{}", ev.report.to_table());
            finish_run(
                &dir,
                name,
                &cfg,
                json!({"checkpoint": checkpoint, "model_checksum": model.checksum(), "dataset_sha256": ds.content_digest(), "untouched_verified": verified}),
                started,
            )?;
            Ok(json!({"report": ev.report, "untouched_verified": verified, "files": files.len()}))
        }
        Command::Bench { checkpoint, repetitions, warmup, v_in, out } => {
            if let Some(r) = repetitions {
                cfg.eval.timing_repetitions = r;
            }
            if let Some(w) = warmup {
                cfg.eval.timing_warmup = w;
            }
            if let Some(v) = v_in {
                cfg.eval.timing_v_in = v;
            }
            let dir = out_dir(&out, name);
            start_run(&dir, &cfg)?;
            let model = InferenceModel::from_checkpoint(&checkpoint)?;
            let e = &cfg.eval;
            let report = time_inference(&model, e.timing_v_in, e.timing_repetitions, e.timing_warmup)?;
            write_json(&dir.join("timing.json"), &report)?;
            finish_run(&dir, name, &cfg, json!({"checkpoint": checkpoint, "model_checksum": model.checksum()}), started)?;
            Ok(json!({
                "median_s": report.median_s,
                "mean_s": report.mean_s,
                "speedup": report.speedup,
                "fvm_baseline_s": report.fvm_baseline_s,
                "n_points": report.n_points,
                "environment": report.environment,
            }))
        }
        Command::Infer { checkpoint, v_in, space } => {
            let model = InferenceModel::from_checkpoint(&checkpoint)?;
            let p = serve::predict(&model, v_in, space.unwrap_or(cfg.serve.space))?;
            Ok(serde_json::to_value(&p).map_err(Error::from)?)
        }
        Command::Serve { checkpoint, bind, max_concurrent, space } => {
            if let Some(c) = checkpoint {
                cfg.serve.checkpoint = Some(c);
            }
            if let Some(b) = bind {
                cfg.serve.bind = b;
            }
            if let Some(m) = max_concurrent {
                cfg.serve.max_concurrent = m;
            }
            if let Some(s) = space {
                cfg.serve.space = s;
            }
            cfg.validate()?;
            let checkpoint = cfg
                .serve
                .checkpoint
                .clone()
                .ok_or_else(|| CliError::Usage("serve needs --checkpoint or serve.checkpoint".into()))?;
            let bind: SocketAddr = cfg
                .serve
                .bind
                .parse()
                .map_err(|e| CliError::Usage(format!("bad bind address `{}`: {e}", cfg.serve.bind)))?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(threads()?)
                .enable_all()
                .build()
                .map_err(|e| Error::InvalidState(format!("cannot start runtime: {e}")))?;
            rt.block_on(serve::serve(serve::ServeConfig {
                bind,
                checkpoint,
                max_concurrent: cfg.serve.max_concurrent,
                default_space: cfg.serve.space,
            }))?;
            Ok(Value::Null)
        }
        Command::Ablate { data, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let spec = apply_data_args(&mut cfg, &data)?;
            let dir = out_dir(&data.out, name);
            start_run(&dir, &cfg)?;
            let ds = load_dataset(&data.data)?;
            let report = pipeline::ablation(&ds, &spec, &cfg.train, cfg.eval.space, None)?;
            write_json(&dir.join("ablation.json"), &report)?;
            std::fs::write(dir.join("ablation.txt"), report.to_table())
                .map_err(|e| Error::InvalidState(format!("cannot write table: {e}")))?;
            eprintln!("{}", report.to_table());
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": ds.content_digest(), "split": spec}), started)?;
            Ok(json!({"heads_better": report.heads_better, "heads_params": report.heads.param_count, "vanilla_params": report.vanilla.param_count}))
        }
        Command::Robustness { data, splits, node_steps, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let spec = apply_data_args(&mut cfg, &data)?;
            for &f in &splits {
                if !(f > 0.0 && f < 1.0) {
                    return Err(CliError::Usage(format!("split fraction {f} must lie in (0, 1)")));
                }
            }
            let dir = out_dir(&data.out, name);
            start_run(&dir, &cfg)?;
            let ds = load_dataset(&data.data)?;
            let report = pipeline::robustness(
                &ds,
                &splits,
                &node_steps,
                spec.train_fraction,
                spec.seed,
                &cfg.train,
                cfg.eval.space,
                None,
            )?;
            write_json(&dir.join("robustness.json"), &report)?;
            std::fs::write(dir.join("robustness.txt"), report.to_tables())
                .map_err(|e| Error::InvalidState(format!("cannot write tables: {e}")))?;
            eprintln!("{}", report.to_tables());
            finish_run(&dir, name, &cfg, json!({"dataset_sha256": ds.content_digest()}), started)?;
            Ok(json!({"cells": report.cells.len(), "max_relative_deviation": report.max_relative_deviation()}))
        }
    }
}
