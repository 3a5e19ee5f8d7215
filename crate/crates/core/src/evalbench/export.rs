use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Evaluation, ScenarioMetrics};
use crate::dataset::GridShape;
use crate::error::{Error, Result};
use crate::{N_PARAMS, PARAM_NAMES};

pub const HISTOGRAM_BINS: usize = 30;
pub const SELECTION_QUANTILES: [(f64, &str); 5] =
    [(0.0, "best"), (0.25, "q25"), (0.5, "median"), (0.75, "q75"), (1.0, "worst")];

const CELL_PX: usize = 4;
const MARGIN_PX: usize = 20;
const TITLE_PX: usize = 16;
const COLORBAR_PX: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self, b: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + b as f64 * w, self.lo + (b + 1) as f64 * w)
    }
}

/// Equal-width bins over `[min, max]`; the maximum falls in the last bin.
/// A constant sample lands entirely in bin 0.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 || values.is_empty() {
        return Err(Error::InvalidArgument("histogram needs values and at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { block: "histogram input".into() });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// Positions (into `per_scenario`) of the best, quartile and worst scenarios
/// by relative L2 error of field `param`. Ties keep scenario order.
pub fn select_scenarios(per_scenario: &[ScenarioMetrics], param: usize) -> Vec<(&'static str, usize)> {
    let mut order: Vec<usize> = (0..per_scenario.len()).collect();
    order.sort_by(|&a, &b| per_scenario[a].params[param].rel_l2.total_cmp(&per_scenario[b].params[param].rel_l2));
    if order.is_empty() {
        return Vec::new();
    }
    let last = (order.len() - 1) as f64;
    SELECTION_QUANTILES
        .iter()
        .map(|&(q, label)| (label, order[(q * last).round() as usize]))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write per-scenario metrics, error histograms, the selected scenarios and
/// their true / predicted / error field triplets (CSV and SVG) into `out_dir`.
pub fn export_artifacts(
    eval: &Evaluation,
    coords: ArrayView2<f64>,
    grid: Option<GridShape>,
    out_dir: &Path,
) -> Result<ExportSummary> {
    let n = coords.nrows();
    if eval.truth.dim().2 != n || eval.predictions.dim() != eval.truth.dim() {
        return Err(Error::Shape(format!(
            "fields {:?} / {:?} do not match {n} coordinates",
            eval.truth.dim(),
            eval.predictions.dim()
        )));
    }
    if let Some(g) = grid {
        if g.n_s * g.n_r != n {
            return Err(Error::Shape(format!("grid {}×{} does not cover {n} nodes", g.n_s, g.n_r)));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fields_dir = out_dir.join("fields");
    fs::create_dir_all(&fields_dir).map_err(|e| Error::io(&fields_dir, e))?;
    let mut files = Vec::new();
    let space = eval.report.space;

    let path = out_dir.join("per_scenario.csv");
    let mut header = vec!["scenario".to_string(), "v_in".to_string()];
    for p in PARAM_NAMES {
        for m in ["mse", "mae", "rel_l2"] {
            header.push(format!("{p}_{m}"));
        }
    }
    write_csv(
        &path,
        &header,
        eval.per_scenario.iter().map(|s| {
            let mut row = vec![s.scenario.to_string(), s.input.first().copied().unwrap_or(f64::NAN).to_string()];
            for m in &s.params {
                row.extend([m.mse, m.mae, m.rel_l2].map(|v| v.to_string()));
            }
            row
        }),
    )?;
    files.push(path);

    for (p, name) in PARAM_NAMES.iter().enumerate() {
        for metric in ["mse", "rel_l2"] {
            let values: Vec<f64> = eval
                .per_scenario
                .iter()
                .map(|s| if metric == "mse" { s.params[p].mse } else { s.params[p].rel_l2 })
                .collect();
            let h = histogram(&values, HISTOGRAM_BINS)?;
            let path = out_dir.join(format!("hist_{name}_{metric}_{space}.csv"));
            write_csv(
                &path,
                &["bin_lo".into(), "bin_hi".into(), "count".into()],
                (0..h.counts.len()).map(|b| {
                    let (a, z) = h.edges(b);
                    vec![a.to_string(), z.to_string(), h.counts[b].to_string()]
                }),
            )?;
            files.push(path);
        }
    }

    let mut selection = Vec::new();
    for (p, name) in PARAM_NAMES.iter().enumerate().take(N_PARAMS) {
        for (label, pos) in select_scenarios(&eval.per_scenario, p) {
            let sc = &eval.per_scenario[pos];
            selection.push(vec![
                name.to_string(),
                label.to_string(),
                sc.scenario.to_string(),
                sc.params[p].rel_l2.to_string(),
            ]);
            let truth = eval.truth.slice(ndarray::s![pos, p, ..]);
            let pred = eval.predictions.slice(ndarray::s![pos, p, ..]);
            let err = (&pred - &truth).mapv(f64::abs);
            let stem = format!("{name}_{label}_scenario{}", sc.scenario);
            let path = fields_dir.join(format!("{stem}.csv"));
            write_csv(
                &path,
                &["x", "y", "z", "true", "predicted", "abs_error"].map(String::from),
                (0..n).map(|i| {
                    vec![
                        coords[[i, 0]].to_string(),
                        coords[[i, 1]].to_string(),
                        coords[[i, 2]].to_string(),
                        truth[i].to_string(),
                        pred[i].to_string(),
                        err[i].to_string(),
                    ]
                }),
            )?;
            files.push(path);
            let title = format!("{name}, {label}, scenario {} (physical)", sc.scenario);
            let svg = render_triplet(&title, [truth, pred, err.view()], coords, grid);
            let path = fields_dir.join(format!("{stem}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    let path = out_dir.join(format!("selection_{space}.csv"));
    write_csv(&path, &["parameter", "label", "scenario", "rel_l2"].map(String::from), selection)?;
    files.push(path);
    Ok(ExportSummary { files })
}

const VIRIDIS: [(u8, u8, u8); 8] = [
    (68, 1, 84),
    (70, 50, 127),
    (54, 92, 141),
    (39, 127, 142),
    (31, 161, 135),
    (74, 194, 109),
    (159, 218, 58),
    (253, 231, 37),
];

fn viridis(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |u: u8, v: u8| (u as f64 + f * (v as f64 - u as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Three stacked heatmaps. With a known grid each panel is an `n_s × n_r`
/// raster in index space; otherwise nodes are scattered by their `x, y`.
fn render_triplet(title: &str, panels: [ArrayView1<f64>; 3], coords: ArrayView2<f64>, grid: Option<GridShape>) -> String {
    let (pw, ph) = match grid {
        Some(g) => (g.n_s * CELL_PX, g.n_r * CELL_PX),
        None => (400, 200),
    };
    let width = 2 * MARGIN_PX + pw + COLORBAR_PX;
    let height = TITLE_PX + 3 * (ph + TITLE_PX + MARGIN_PX) + MARGIN_PX;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN_PX}" y="{}" font-size="12">{title}</text>"#, TITLE_PX - 3);
    let (xr, yr) = (axis_range(coords.column(0)), axis_range(coords.column(1)));
    for (k, (values, label)) in panels.iter().zip(["true", "predicted", "|error|"]).enumerate() {
        let top = TITLE_PX + k * (ph + TITLE_PX + MARGIN_PX) + TITLE_PX;
        let (lo, hi) = axis_range(values.view());
        let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let _ = writeln!(svg, r#"<text x="{MARGIN_PX}" y="{}" font-size="11">{label}</text>"#, top - 3);
        let _ = writeln!(svg, r#"<g transform="translate({MARGIN_PX},{top})">"#);
        match grid {
            Some(g) => {
                for i in 0..g.n_s {
                    for j in 0..g.n_r {
                        let v = values[i * g.n_r + j];
                        let _ = writeln!(
                            svg,
                            r#"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="{}"/>"#,
                            i * CELL_PX,
                            (g.n_r - 1 - j) * CELL_PX,
                            viridis(norm(v))
                        );
                    }
                }
            }
            None => {
                for (i, &v) in values.iter().enumerate() {
                    let px = scale_to(coords[[i, 0]], xr, pw as f64);
                    let py = ph as f64 - scale_to(coords[[i, 1]], yr, ph as f64);
                    let _ = writeln!(svg, r#"<circle cx="{px:.1}" cy="{py:.1}" r="2" fill="{}"/>"#, viridis(norm(v)));
                }
            }
        }
        let _ = writeln!(svg, "</g>");
        let bx = MARGIN_PX + pw + 10;
        let steps = 20;
        for s in 0..steps {
            let t = 1.0 - s as f64 / (steps - 1) as f64;
            let _ = writeln!(
                svg,
                r#"<rect x="{bx}" y="{:.1}" width="10" height="{:.1}" fill="{}"/>"#,
                top as f64 + s as f64 * ph as f64 / steps as f64,
                ph as f64 / steps as f64 + 0.5,
                viridis(t)
            );
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="9">{hi:.3e}</text>"#, bx + 12, top + 8);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="9">{lo:.3e}</text>"#, bx + 12, top + ph);
    }
    svg.push_str("</svg>\n");
    svg
}

fn axis_range(v: ArrayView1<f64>) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn scale_to(v: f64, (lo, hi): (f64, f64), len: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo) * len
    } else {
        len / 2.0
    }
}
