//! On-disk model format: `model.json` (header) plus `weights.f32le` (parameters).
//!
//! The blob holds every layer as row-major `in × out` weights followed by the
//! bias, in the order branch layers, trunk layers, heads `[P, V_o, k]`. The blob
//! is written first and the header last; both go through a temporary file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{DataBinding, DeepOnetConfig, DeepOnetModel};
use crate::dataset::io::{read_file, write_atomic};
use crate::dataset::{GridShape, ScalerParams};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp, Parameters};
use crate::PARAM_NAMES;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.f32le";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSection {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements (not bytes).
    pub offset: usize,
}

impl BlobSection {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: DeepOnetConfig,
    pub parameter_order: Vec<String>,
    pub init: String,
    pub param_count: usize,
    pub dtype: String,
    pub endianness: String,
    pub weights_file: String,
    pub blob_bytes: u64,
    pub blob_sha256: String,
    pub sections: Vec<BlobSection>,
    pub scaler: Option<ScalerParams>,
    /// Physical node coordinates, full precision.
    pub coords: Option<Vec<[f64; 3]>>,
    pub grid: Option<GridShape>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// `(name, in, out, activation)` for every layer, in blob order.
pub(crate) fn layer_specs(config: &DeepOnetConfig) -> Vec<(String, usize, usize, Activation)> {
    let mut out = Vec::new();
    for (prefix, sizes) in [("branch", config.branch_sizes()), ("trunk", config.trunk_sizes())] {
        let last = sizes.len() - 2;
        for (i, w) in sizes.windows(2).enumerate() {
            let act = if i == last { Activation::Linear } else { Activation::Relu };
            out.push((format!("{prefix}.{i}"), w[0], w[1], act));
        }
    }
    if config.with_heads {
        for name in PARAM_NAMES.iter().take(config.n_params) {
            out.push((format!("head.{name}"), config.n_points, config.n_points, Activation::Linear));
        }
    }
    out
}

pub(crate) fn sections_for(config: &DeepOnetConfig) -> Vec<BlobSection> {
    let mut offset = 0;
    let mut out = Vec::new();
    for (name, i, o, _) in layer_specs(config) {
        out.push(BlobSection {
            name: format!("{name}.weights"),
            shape: vec![i, o],
            offset,
        });
        offset += i * o;
        out.push(BlobSection {
            name: format!("{name}.bias"),
            shape: vec![o],
            offset,
        });
        offset += o;
    }
    out
}

/// Persist `model` into `dir` (created if needed). Returns the header written.
pub fn checkpoint_save(model: &DeepOnetModel, dir: &Path) -> Result<CheckpointHeader> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sections = sections_for(&model.config);
    let blocks = model.param_blocks();
    debug_assert_eq!(blocks.len(), sections.len());

    let blob_path = dir.join(WEIGHTS_FILE);
    let tmp = dir.join(format!("{WEIGHTS_FILE}.tmp"));
    let mut hasher = Sha256::new();
    let mut bytes = 0u64;
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::with_capacity(1 << 20, file);
        let mut chunk = Vec::with_capacity(1 << 16);
        for ((name, block), sec) in blocks.iter().zip(&sections) {
            if *name != sec.name || block.len() != sec.len() {
                return Err(Error::InvalidState(format!(
                    "parameter block {name} does not match layout entry {}",
                    sec.name
                )));
            }
            for part in block.chunks(1 << 14) {
                chunk.clear();
                for &v in part {
                    chunk.extend_from_slice(&(v as f32).to_le_bytes());
                }
                hasher.update(&chunk);
                w.write_all(&chunk).map_err(|e| Error::io(&tmp, e))?;
                bytes += chunk.len() as u64;
            }
        }
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let binding = model.binding.as_ref();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config.clone(),
        parameter_order: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        init: "xavier_uniform weights, zero bias".into(),
        param_count: model.param_count(),
        dtype: "f32".into(),
        endianness: "little".into(),
        weights_file: WEIGHTS_FILE.into(),
        blob_bytes: bytes,
        blob_sha256: hex::encode(hasher.finalize()),
        sections,
        scaler: binding.map(|b| b.scaler.clone()),
        coords: binding.map(|b| b.coords.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()),
        grid: binding.and_then(|b| b.grid),
        provenance: binding.map(|b| b.provenance.clone()).unwrap_or_default(),
    };
    let json = serde_json::to_vec_pretty(&header)?;
    write_atomic(&dir.join(HEADER_FILE), &json)?;
    Ok(header)
}

/// Parse and validate `model.json` without touching the blob.
pub fn read_header(dir: &Path) -> Result<CheckpointHeader> {
    let path = dir.join(HEADER_FILE);
    let raw = read_file(&path)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&raw).map_err(|e| Error::corrupt(&path, format!("unreadable header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::corrupt(
            &path,
            format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    header
        .config
        .validate()
        .map_err(|e| Error::corrupt(&path, format!("invalid model config: {e}")))?;
    if header.sections != sections_for(&header.config) {
        return Err(Error::corrupt(&path, "blob layout does not match the model config"));
    }
    if header.param_count != header.config.param_count() {
        return Err(Error::corrupt(&path, "parameter count does not match the model config"));
    }
    if header.parameter_order != PARAM_NAMES {
        return Err(Error::corrupt(&path, "unexpected parameter order"));
    }
    if header.dtype != "f32" || header.endianness != "little" {
        return Err(Error::corrupt(&path, "only little-endian f32 weights are supported"));
    }
    if header.weights_file != WEIGHTS_FILE {
        return Err(Error::corrupt(&path, "unexpected weights file name"));
    }
    if let (Some(s), Some(c)) = (&header.scaler, &header.coords) {
        if s.input.len() != header.config.n_input || c.len() != header.config.n_points {
            return Err(Error::corrupt(&path, "scaler or coordinates do not match the model config"));
        }
    }
    if header.scaler.is_some() != header.coords.is_some() {
        return Err(Error::corrupt(&path, "scaler and coordinates must be stored together"));
    }
    Ok(header)
}

/// Header plus verified blob bytes.
pub(crate) fn read_verified(dir: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let header = read_header(dir)?;
    let path = dir.join(WEIGHTS_FILE);
    let blob = read_file(&path)?;
    let expected = 4 * header.param_count as u64;
    if blob.len() as u64 != expected || header.blob_bytes != expected {
        return Err(Error::corrupt(
            &path,
            format!("weights blob is {} bytes, expected {expected}", blob.len()),
        ));
    }
    let digest = hex::encode(Sha256::digest(&blob));
    if digest != header.blob_sha256 {
        return Err(Error::corrupt(&path, "checksum mismatch"));
    }
    if blob
        .chunks_exact(4)
        .any(|c| !f32::from_le_bytes([c[0], c[1], c[2], c[3]]).is_finite())
    {
        return Err(Error::corrupt(&path, "weights contain non-finite values"));
    }
    Ok((header, blob))
}

pub(crate) fn section_values<'a>(blob: &'a [u8], sec: &BlobSection) -> impl Iterator<Item = f32> + 'a {
    blob[4 * sec.offset..4 * (sec.offset + sec.len())]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

pub(crate) fn binding_from_header(header: &CheckpointHeader) -> Option<DataBinding> {
    match (&header.scaler, &header.coords) {
        (Some(scaler), Some(coords)) => Some(DataBinding {
            scaler: scaler.clone(),
            coords: Array2::from_shape_fn((coords.len(), 3), |(i, a)| coords[i][a]),
            grid: header.grid,
            provenance: header.provenance.clone(),
        }),
        _ => None,
    }
}

/// Load a checkpoint written by [`checkpoint_save`] into a trainable f64 model.
pub fn checkpoint_load(dir: &Path) -> Result<DeepOnetModel> {
    let (header, blob) = read_verified(dir)?;
    let mut layers = Vec::new();
    for ((name, i, o, act), pair) in layer_specs(&header.config).into_iter().zip(header.sections.chunks(2)) {
        let w: Vec<f64> = section_values(&blob, &pair[0]).map(f64::from).collect();
        let b: Vec<f64> = section_values(&blob, &pair[1]).map(f64::from).collect();
        let weights = Array2::from_shape_vec((i, o), w).map_err(|e| Error::Shape(e.to_string()))?;
        layers.push((name, DenseLayer::new(weights, Array1::from(b), act)?));
    }
    let mut branch = Vec::new();
    let mut trunk = Vec::new();
    let mut heads = Vec::new();
    for (name, layer) in layers {
        if name.starts_with("branch.") {
            branch.push(layer);
        } else if name.starts_with("trunk.") {
            trunk.push(layer);
        } else {
            heads.push(layer);
        }
    }
    Ok(DeepOnetModel {
        binding: binding_from_header(&header),
        config: header.config,
        branch: Mlp::from_layers(branch)?,
        trunk: Mlp::from_layers(trunk)?,
        heads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DeepOnetConfig {
        DeepOnetConfig {
            n_input: 1,
            n_points: 4,
            n_params: 3,
            branch_hidden: vec![3],
            trunk_hidden: vec![3, 2],
            with_heads: true,
            dropout_rate: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn layout_covers_every_parameter() {
        let c = cfg();
        let secs = sections_for(&c);
        let last = secs.last().unwrap();
        assert_eq!(last.offset + last.len(), c.param_count());
        assert_eq!(secs.len(), 2 * (2 + 3 + 3));
        assert_eq!(secs[0].name, "branch.0.weights");
        assert_eq!(last.name, "head.k.bias");
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DeepOnetModel::build(cfg()).unwrap();
        let header = checkpoint_save(&m, dir.path()).unwrap();
        assert_eq!(header.blob_bytes, 4 * m.param_count() as u64);
        let back = checkpoint_load(dir.path()).unwrap();
        for ((_, a), (_, b)) in m.param_blocks().iter().zip(back.param_blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        assert!(back.binding.is_none());
        assert!(!dir.path().join(format!("{WEIGHTS_FILE}.tmp")).exists());
    }

    #[test]
    fn detects_flipped_byte() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint_save(&DeepOnetModel::build(cfg()).unwrap(), dir.path()).unwrap();
        let p = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[7] ^= 0x10;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(checkpoint_load(dir.path()), Err(Error::Corruption { .. })));
    }

    #[test]
    fn missing_blob_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint_save(&DeepOnetModel::build(cfg()).unwrap(), dir.path()).unwrap();
        fs::remove_file(dir.path().join(WEIGHTS_FILE)).unwrap();
        let err = checkpoint_load(dir.path()).unwrap_err();
        assert!(err.to_string().contains(WEIGHTS_FILE), "{err}");
    }

    #[test]
    fn rejects_future_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint_save(&DeepOnetModel::build(cfg()).unwrap(), dir.path()).unwrap();
        let hp = dir.path().join(HEADER_FILE);
        let original = fs::read_to_string(&hp).unwrap();
        fs::write(&hp, original.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(read_header(dir.path()), Err(Error::Corruption { .. })));
        fs::write(&hp, &original).unwrap();
        let wp = dir.path().join(WEIGHTS_FILE);
        let bytes = fs::read(&wp).unwrap();
        fs::write(&wp, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(checkpoint_load(dir.path()), Err(Error::Corruption { .. })));
    }
}
