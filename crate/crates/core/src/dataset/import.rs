use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{cmp_rows, Provenance, ScenarioDataset};
use crate::error::{Error, Result};
use crate::N_PARAMS;

/// Header names of the columns to read from an exported table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub scenario: String,
    pub input: String,
    pub x: String,
    pub y: String,
    pub z: String,
    pub pressure: String,
    pub velocity: String,
    pub tke: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            scenario: "scenario".into(),
            input: "v_in".into(),
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
            pressure: "P".into(),
            velocity: "V_o".into(),
            tke: "k".into(),
        }
    }
}

struct Node {
    xyz: [f64; 3],
    values: [f64; N_PARAMS],
}

struct Scenario {
    id: String,
    input: f64,
    nodes: Vec<Node>,
}

/// Read a comma- or tab-delimited table (one row per scenario × node) into a
/// dataset. Nodes are put in canonical `(x, y, z)` order and every scenario must
/// carry exactly the same node set.
pub fn import_table(path: &Path, columns: &ColumnMap) -> Result<ScenarioDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or_default();
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion(format!("missing column `{name}`")))
    };
    let sid = col(&columns.scenario)?;
    let uid = col(&columns.input)?;
    let xyz = [col(&columns.x)?, col(&columns.y)?, col(&columns.z)?];
    let vals = [col(&columns.pressure)?, col(&columns.velocity)?, col(&columns.tke)?];

    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("row {}: {e}", line + 2)))?;
        let num = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Ingestion(format!("row {}: `{raw}` is not a finite number", line + 2))
                })
        };
        let id = rec.get(sid).unwrap_or("").to_string();
        let input = num(uid)?;
        let node = Node {
            xyz: [num(xyz[0])?, num(xyz[1])?, num(xyz[2])?],
            values: [num(vals[0])?, num(vals[1])?, num(vals[2])?],
        };
        let slot = *by_id.entry(id.clone()).or_insert_with(|| {
            scenarios.push(Scenario {
                id: id.clone(),
                input,
                nodes: Vec::new(),
            });
            scenarios.len() - 1
        });
        let sc = &mut scenarios[slot];
        if sc.input != input {
            return Err(Error::Ingestion(format!(
                "scenario `{id}` has more than one inlet value ({} and {input})",
                sc.input
            )));
        }
        sc.nodes.push(node);
    }
    if scenarios.is_empty() {
        return Err(Error::Ingestion(format!("{} contains no data rows", path.display())));
    }

    for sc in &mut scenarios {
        sc.nodes.sort_by(|a, b| cmp_rows(&a.xyz, &b.xyz));
        if let Some(w) = sc.nodes.windows(2).find(|w| w[0].xyz == w[1].xyz) {
            return Err(Error::Ingestion(format!(
                "scenario `{}` lists node {:?} more than once",
                sc.id, w[0].xyz
            )));
        }
    }
    let reference = &scenarios[0];
    let offending: Vec<&str> = scenarios[1..]
        .iter()
        .filter(|sc| {
            sc.nodes.len() != reference.nodes.len()
                || sc.nodes.iter().zip(&reference.nodes).any(|(a, b)| a.xyz != b.xyz)
        })
        .map(|sc| sc.id.as_str())
        .collect();
    if !offending.is_empty() {
        return Err(Error::Ingestion(format!(
            "node sets differ from scenario `{}` in scenarios: {}",
            reference.id,
            offending.join(", ")
        )));
    }

    let (m, n) = (scenarios.len(), reference.nodes.len());
    let coords = Array2::from_shape_fn((n, 3), |(i, a)| reference.nodes[i].xyz[a]);
    let inputs = Array2::from_shape_fn((m, 1), |(j, _)| scenarios[j].input);
    let fields = Array3::from_shape_fn((m, N_PARAMS, n), |(j, p, i)| scenarios[j].nodes[i].values[p]);
    let mut meta = Provenance::new("import");
    meta.details = serde_json::json!({
        "path": path.display().to_string(),
        "scenario_ids": scenarios.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
        "columns": columns,
    });
    ScenarioDataset::new(coords, inputs, fields, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const TOY: &str = "scenario,v_in,x,y,z,P,V_o,k
a,0.7,0.0,0.0,0,1.0,0.5,0.001
a,0.7,0.1,0.0,0,2.0,0.6,0.002
a,0.7,0.0,0.1,0,3.0,0.7,0.003
b,0.8,0.1,0.0,0,4.0,0.8,0.004
b,0.8,0.0,0.0,0,5.0,0.9,0.005
b,0.8,0.0,0.1,0,6.0,1.0,0.006
";

    #[test]
    fn two_scenarios_three_nodes() {
        let f = write(TOY);
        let ds = import_table(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!((ds.n_scenarios(), ds.n_points()), (2, 3));
        // canonical order: (0,0), (0,0.1), (0.1,0)
        assert_eq!(ds.coords.row(1).to_vec(), vec![0.0, 0.1, 0.0]);
        assert_eq!(ds.fields[[1, 0, 0]], 5.0);
        assert_eq!(ds.fields[[1, 0, 2]], 4.0);
        assert_eq!(ds.inputs[[1, 0]], 0.8);
    }

    #[test]
    fn tab_delimited_is_accepted() {
        let f = write(&TOY.replace(',', "\t"));
        let ds = import_table(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(ds.n_points(), 3);
    }

    #[test]
    fn missing_node_names_scenario() {
        let text: String = TOY.lines().filter(|l| !l.starts_with("b,0.8,0.0,0.1")).collect::<Vec<_>>().join("\n");
        let f = write(&text);
        let err = import_table(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Ingestion(ref m) if m.contains("scenarios: b")), "{err}");
    }

    #[test]
    fn duplicate_node_rejected() {
        let f = write(&format!("{TOY}a,0.7,0.1,0.0,0,9.0,0.6,0.002\n"));
        let err = import_table(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Ingestion(ref m) if m.contains("more than once")));
    }

    #[test]
    fn missing_column_reported() {
        let f = write("scenario,v_in,x,y,z,P,V_o\na,1,0,0,0,1,1\n");
        assert!(matches!(
            import_table(f.path(), &ColumnMap::default()),
            Err(Error::Ingestion(m)) if m.contains("`k`")
        ));
    }
}
