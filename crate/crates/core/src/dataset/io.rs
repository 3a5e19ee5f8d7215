use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provenance, ScenarioDataset};
use crate::error::{Error, Result};
use crate::PARAM_NAMES;

pub const DATASET_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const COORDS: &str = "coords.f32le";
const INPUTS: &str = "inputs.f32le";
const FIELDS: &str = "fields.f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
    /// Row-major shape of the stored tensor.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_scenarios: usize,
    pub n_points: usize,
    pub n_input: usize,
    pub dtype: String,
    pub endianness: String,
    pub parameter_order: Vec<String>,
    pub units: BTreeMap<String, String>,
    pub provenance: Provenance,
    pub files: BTreeMap<String, FileEntry>,
    /// SHA-256 over the three blobs concatenated (coords, inputs, fields).
    pub content_sha256: String,
}

pub(crate) fn encode_f32le<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode_f32le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a temporary sibling and rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn default_units() -> BTreeMap<String, String> {
    [
        ("coords", "m"),
        ("inputs", "m/s (assumed, model scale)"),
        ("P", "Pa (assumed)"),
        ("V_o", "m/s"),
        ("k", "m^2/s^2"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Write `manifest.json` plus the three little-endian f32 blobs into `dir`.
/// The manifest is written last, so a readable manifest implies complete blobs.
pub fn save_dataset(ds: &ScenarioDataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blobs = [
        (COORDS, encode_f32le(ds.coords.iter()), vec![ds.n_points(), 3]),
        (INPUTS, encode_f32le(ds.inputs.iter()), vec![ds.n_scenarios(), ds.n_input()]),
        (
            FIELDS,
            encode_f32le(ds.fields.iter()),
            vec![ds.n_scenarios(), PARAM_NAMES.len(), ds.n_points()],
        ),
    ];
    let mut files = BTreeMap::new();
    let mut content = Sha256::new();
    for (name, bytes, shape) in &blobs {
        content.update(bytes);
        write_atomic(&dir.join(name), bytes)?;
        files.insert(
            name.to_string(),
            FileEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                shape: shape.clone(),
            },
        );
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        n_scenarios: ds.n_scenarios(),
        n_points: ds.n_points(),
        n_input: ds.n_input(),
        dtype: "f32".into(),
        endianness: "little".into(),
        parameter_order: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        units: default_units(),
        provenance: ds.meta.clone(),
        files,
        content_sha256: hex::encode(content.finalize()),
    };
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let manifest: DatasetManifest = serde_json::from_slice(&read_file(&path)?)
        .map_err(|e| Error::corrupt(&path, e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::corrupt(
            &path,
            format!(
                "format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(Error::corrupt(&path, "only little-endian f32 blobs are supported"));
    }
    if manifest.parameter_order != PARAM_NAMES {
        return Err(Error::corrupt(
            &path,
            format!("unexpected parameter order {:?}", manifest.parameter_order),
        ));
    }
    Ok(manifest)
}

fn load_blob(dir: &Path, manifest: &DatasetManifest, name: &str, expect: &[usize]) -> Result<Vec<f64>> {
    let path = dir.join(name);
    let entry = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::corrupt(dir.join(MANIFEST), format!("no entry for {name}")))?;
    if entry.shape != expect {
        return Err(Error::corrupt(
            &path,
            format!("shape {:?} disagrees with counts {:?}", entry.shape, expect),
        ));
    }
    let bytes = read_file(&path)?;
    let want = 4 * expect.iter().product::<usize>();
    if bytes.len() != want || entry.bytes != want as u64 {
        return Err(Error::corrupt(
            &path,
            format!("expected {want} bytes, found {}", bytes.len()),
        ));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::corrupt(&path, "sha256 mismatch"));
    }
    Ok(decode_f32le(&bytes))
}

/// Load and verify a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<ScenarioDataset> {
    let mf = load_manifest(dir)?;
    let (m, n, ni) = (mf.n_scenarios, mf.n_points, mf.n_input);
    let coords = load_blob(dir, &mf, COORDS, &[n, 3])?;
    let inputs = load_blob(dir, &mf, INPUTS, &[m, ni])?;
    let fields = load_blob(dir, &mf, FIELDS, &[m, PARAM_NAMES.len(), n])?;
    let shape_err = |e: ndarray::ShapeError| Error::corrupt(dir, e.to_string());
    ScenarioDataset::new(
        Array2::from_shape_vec((n, 3), coords).map_err(shape_err)?,
        Array2::from_shape_vec((m, ni), inputs).map_err(shape_err)?,
        Array3::from_shape_vec((m, PARAM_NAMES.len(), n), fields).map_err(shape_err)?,
        mf.provenance,
    )
    .map_err(|e| Error::corrupt(dir, e.to_string()))
}
