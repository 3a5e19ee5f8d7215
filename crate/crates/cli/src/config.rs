//! Run configuration file.
//!
//! Every section and every field is optional. A section given in the file is
//! merged key by key over the defaults of the chosen scale, then parsed
//! strictly, so unknown keys are rejected at any depth.

use std::path::{Path, PathBuf};

use hotleg_core::flowgen::{FluidConfig, GeometryConfig, SurrogateCoeffs, V_RANGE};
use hotleg_core::training::SearchSpace;
use hotleg_core::{Error, Result, Space, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

const SECTIONS: [&str; 10] = [
    "scale", "geometry", "fluid", "surrogate", "dataset", "model", "train", "search", "eval", "serve",
];

/// The two problem sizes: a 63 × 20 desk grid with 500 scenarios and 300
/// epochs, or the 189 × 60 full grid with 5,000 scenarios and 1,000 epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub scenarios: usize,
    pub seed: u64,
    pub v_min: f64,
    pub v_max: f64,
    pub train_fraction: f64,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub with_heads: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub trials: usize,
    pub seed: u64,
    /// Training preset the trials start from.
    pub base_preset: String,
    pub folds: usize,
    pub space: SearchSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub space: Space,
    pub export: bool,
    pub timing_repetitions: usize,
    pub timing_warmup: usize,
    pub timing_v_in: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    pub checkpoint: Option<PathBuf>,
    pub max_concurrent: usize,
    pub space: Space,
}

/// Fully resolved configuration, echoed into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveConfig {
    pub scale: Scale,
    pub geometry: GeometryConfig,
    pub fluid: FluidConfig,
    pub surrogate: SurrogateCoeffs,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train_preset: String,
    /// Training settings with the model section folded in.
    pub train: TrainConfig,
    pub search: SearchSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn section<T: Serialize + DeserializeOwned>(name: &str, default: T, overlay: Option<&Value>) -> Result<T> {
    let Some(overlay) = overlay else {
        return Ok(default);
    };
    if !overlay.is_object() {
        return Err(Error::Config(format!("section `{name}` must be a JSON object")));
    }
    let mut v = serde_json::to_value(default)?;
    merge(&mut v, overlay.clone());
    serde_json::from_value(v).map_err(|e| Error::Config(format!("section `{name}`: {e}")))
}

impl EffectiveConfig {
    pub fn defaults(scale: Scale) -> Self {
        Self::from_value(&serde_json::json!({ "scale": scale })).expect("defaults resolve")
    }

    /// Resolve a parsed config document.
    pub fn from_value(doc: &Value) -> Result<Self> {
        let obj: &Map<String, Value> = doc
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(k) = obj.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown section `{k}` (expected one of {})",
                SECTIONS.join(", ")
            )));
        }
        let scale: Scale = match obj.get("scale") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("scale: {e}")))?,
            None => Scale::Desk,
        };
        let (geometry, scenarios, preset) = match scale {
            Scale::Desk => (GeometryConfig::desk(), 500, "desk"),
            Scale::Paper => (GeometryConfig::paper(), 5000, "final"),
        };
        let geometry = section("geometry", geometry, obj.get("geometry"))?;
        let fluid = section("fluid", FluidConfig::default(), obj.get("fluid"))?;
        let surrogate = section("surrogate", SurrogateCoeffs::default(), obj.get("surrogate"))?;
        let dataset = section(
            "dataset",
            DatasetSection {
                scenarios,
                seed: 42,
                v_min: V_RANGE.0,
                v_max: V_RANGE.1,
                train_fraction: 0.8,
                split_seed: 42,
            },
            obj.get("dataset"),
        )?;

        let mut train_overlay = obj.get("train").cloned().unwrap_or_else(|| Value::Object(Map::new()));
        let preset = match train_overlay.as_object_mut().and_then(|m| m.remove("preset")) {
            Some(Value::String(s)) => s,
            Some(other) => return Err(Error::Config(format!("train.preset must be a string, got {other}"))),
            None => preset.to_string(),
        };
        let base = TrainConfig::preset(&preset)?;
        let model = section(
            "model",
            ModelSection {
                branch_hidden: base.branch_hidden.clone(),
                trunk_hidden: base.trunk_hidden.clone(),
                with_heads: base.with_heads,
            },
            obj.get("model"),
        )?;
        let mut train: TrainConfig = section("train", base, Some(&train_overlay))?;
        train.branch_hidden = model.branch_hidden.clone();
        train.trunk_hidden = model.trunk_hidden.clone();
        train.with_heads = model.with_heads;

        let search = section(
            "search",
            SearchSection {
                trials: hotleg_core::training::DEFAULT_TRIALS,
                seed: 0,
                base_preset: "tuning".into(),
                folds: 5,
                space: SearchSpace::default(),
            },
            obj.get("search"),
        )?;
        let eval = section(
            "eval",
            EvalSection {
                space: Space::Scaled,
                export: true,
                timing_repetitions: 20,
                timing_warmup: 3,
                timing_v_in: 0.73,
            },
            obj.get("eval"),
        )?;
        let serve = section(
            "serve",
            ServeSection {
                bind: "127.0.0.1:8080".into(),
                checkpoint: None,
                max_concurrent: 8,
                space: Space::Physical,
            },
            obj.get("serve"),
        )?;
        let cfg = Self {
            scale,
            geometry,
            fluid,
            surrogate,
            dataset,
            model,
            train_preset: preset,
            train,
            search,
            eval,
            serve,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let doc: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(&doc)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.fluid.validate()?;
        self.surrogate.validate()?;
        self.train.validate()?;
        self.search.space.validate()?;
        TrainConfig::preset(&self.search.base_preset)?;
        let d = &self.dataset;
        if d.scenarios == 0 {
            return Err(Error::Config("dataset.scenarios must be ≥ 1".into()));
        }
        if !(d.v_min > 0.0 && d.v_min < d.v_max && d.v_max.is_finite()) {
            return Err(Error::Config(format!(
                "dataset velocity range [{}, {}] must be positive and increasing",
                d.v_min, d.v_max
            )));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!("dataset.train_fraction must lie in (0, 1), got {}", d.train_fraction)));
        }
        if self.serve.max_concurrent == 0 {
            return Err(Error::Config("serve.max_concurrent must be ≥ 1".into()));
        }
        if self.eval.timing_repetitions == 0 {
            return Err(Error::Config("eval.timing_repetitions must be ≥ 1".into()));
        }
        Ok(())
    }

    /// The base configuration hyperparameter trials start from: the search
    /// preset with this config's layer shapes and seed.
    pub fn search_base(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train.seed,
            branch_hidden: self.train.branch_hidden.clone(),
            trunk_hidden: self.train.trunk_hidden.clone(),
            with_heads: self.train.with_heads,
            ..TrainConfig::preset(&self.search.base_preset).expect("validated")
        }
    }

    /// Memory the heads alone need in f32, which is what dominates at full scale.
    pub fn head_bytes_f32(&self) -> usize {
        if self.train.with_heads {
            let n = self.geometry.n_points();
            4 * 3 * (n * n + n)
        } else {
            0
        }
    }
}
