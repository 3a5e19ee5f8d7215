use serde::{Deserialize, Serialize};

use super::fields::{generate_fields, pressure_shape, tke_shape};
use super::{k_inlet, FluidConfig, GeometryConfig, SurrogateCoeffs, V_RANGE};
use crate::error::{Error, Result};
use crate::N_PARAMS;

/// Target channel extrema over `v_range × plane`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRanges {
    pub pressure: (f64, f64),
    pub tke: (f64, f64),
    pub v_range: (f64, f64),
    /// Allowed deviation of each extreme, as a fraction of the target span.
    pub tolerance: f64,
}

impl Default for TargetRanges {
    fn default() -> Self {
        Self {
            pressure: (-231.25, 132.7),
            tke: (0.000875, 0.019015),
            v_range: V_RANGE,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub coeffs: SurrogateCoeffs,
    /// `[P, V_o, k]` `(min, max)` achieved by `coeffs`.
    pub achieved: [(f64, f64); N_PARAMS],
    /// False when the starting coefficients already met the targets.
    pub adjusted: bool,
}

/// Exact per-channel extrema over the plane and the velocity range. Every
/// field is a positive increasing function of `v` times a fixed shape, so the
/// extremes sit at the range endpoints.
pub fn field_extrema(
    geom: &GeometryConfig,
    fluid: &FluidConfig,
    coeffs: &SurrogateCoeffs,
    v_range: (f64, f64),
) -> Result<[(f64, f64); N_PARAMS]> {
    let mut out = [(f64::INFINITY, f64::NEG_INFINITY); N_PARAMS];
    for v in [v_range.0, v_range.1] {
        let f = generate_fields(v, geom, fluid, coeffs)?;
        for (p, slot) in out.iter_mut().enumerate() {
            for &x in f.row(p) {
                slot.0 = slot.0.min(x);
                slot.1 = slot.1.max(x);
            }
        }
    }
    Ok(out)
}

fn within(achieved: (f64, f64), target: (f64, f64), tol: f64) -> bool {
    let span = target.1 - target.0;
    (achieved.0 - target.0).abs() <= tol * span && (achieved.1 - target.1).abs() <= tol * span
}

fn shape_extrema(geom: &GeometryConfig, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..geom.n_s {
        let s = geom.station_s(i);
        for j in 0..geom.n_r {
            let v = f(s, geom.station_x(j));
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Fit `C_f`, `K_b` and `A_k` so the generated extrema land on `targets`.
///
/// Pressure: the min/max ratio depends only on `K_b / C_f`; it is bracketed on
/// a log grid and bisected, then `C_f` scales the span. TKE: the minimum is
/// `k_inlet(v_lo)` whatever the coefficients; `A_k` sets the maximum.
pub fn calibrate_coefficients(
    targets: &TargetRanges,
    geom: &GeometryConfig,
    fluid: &FluidConfig,
    start: &SurrogateCoeffs,
) -> Result<Calibration> {
    for (name, (lo, hi)) in [("pressure", targets.pressure), ("tke", targets.tke), ("v_range", targets.v_range)] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "{name} target needs finite min < max, got [{lo}, {hi}]"
            )));
        }
    }
    if !(targets.tolerance > 0.0) {
        return Err(Error::InvalidArgument("calibration tolerance must be positive".into()));
    }
    let tol = targets.tolerance;
    let met = |a: &[(f64, f64); N_PARAMS]| within(a[0], targets.pressure, tol) && within(a[2], targets.tke, tol);

    let achieved = field_extrema(geom, fluid, start, targets.v_range)?;
    if met(&achieved) {
        return Ok(Calibration {
            coeffs: start.clone(),
            achieved,
            adjusted: false,
        });
    }

    let (p_lo, p_hi) = targets.pressure;
    if !(p_lo < 0.0 && p_hi > 0.0) {
        return Err(Error::Calibration(format!(
            "pressure target [{p_lo}, {p_hi}] must straddle zero (outlet gauge pressure is 0)"
        )));
    }
    let want = p_lo / p_hi;
    let ratio_of = |r: f64| {
        let c = SurrogateCoeffs {
            friction: 1.0,
            bend_pressure: r,
            ..start.clone()
        };
        let (lo, hi) = shape_extrema(geom, |s, x| pressure_shape(geom, &c, s, x));
        lo / hi - want
    };
    let grid: Vec<f64> = (0..=120).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 120.0)).collect();
    let bracket = grid
        .windows(2)
        .find(|w| ratio_of(w[0]).signum() != ratio_of(w[1]).signum())
        .ok_or_else(|| {
            Error::Calibration(format!(
                "no bend/friction ratio in [1e-3, 1e3] reaches pressure min/max ratio {want:.4}"
            ))
        })?;
    let (mut a, mut b) = (bracket[0], bracket[1]);
    let fa_sign = ratio_of(a).signum();
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if ratio_of(mid).signum() == fa_sign {
            a = mid;
        } else {
            b = mid;
        }
    }
    let ratio = 0.5 * (a + b);
    let unit = SurrogateCoeffs {
        friction: 1.0,
        bend_pressure: ratio,
        ..start.clone()
    };
    let (_, shape_hi) = shape_extrema(geom, |s, x| pressure_shape(geom, &unit, s, x));
    let q_hi = 0.5 * fluid.density * targets.v_range.1.powi(2);
    let friction = p_hi / (q_hi * shape_hi);

    let (_, h_max) = shape_extrema(geom, |s, x| tke_shape(geom, start, s, x));
    let k_hi = k_inlet(targets.v_range.1, geom, fluid)?;
    let amplification = (targets.tke.1 / k_hi - 1.0) / h_max;
    if !(amplification >= 0.0 && amplification.is_finite()) {
        return Err(Error::Calibration(format!(
            "TKE maximum {} is below the inlet value {k_hi:.6} at the top of the velocity range",
            targets.tke.1
        )));
    }

    let coeffs = SurrogateCoeffs {
        friction,
        bend_pressure: ratio * friction,
        tke_amplification: amplification,
        ..start.clone()
    };
    let achieved = field_extrema(geom, fluid, &coeffs, targets.v_range)?;
    if !met(&achieved) {
        return Err(Error::Calibration(format!(
            "achieved P [{:.4}, {:.4}], k [{:.6}, {:.6}] miss targets P {:?}, k {:?} by more than {}% of span",
            achieved[0].0,
            achieved[0].1,
            achieved[2].0,
            achieved[2].1,
            targets.pressure,
            targets.tke,
            100.0 * tol
        )));
    }
    Ok(Calibration {
        coeffs,
        achieved,
        adjusted: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgen::generate_dataset;

    #[test]
    fn calibrates_from_a_poor_start() {
        let g = GeometryConfig::desk();
        let f = FluidConfig::default();
        let start = SurrogateCoeffs {
            friction: 0.5,
            bend_pressure: 0.1,
            tke_amplification: 1.0,
            ..Default::default()
        };
        let t = TargetRanges::default();
        let cal = calibrate_coefficients(&t, &g, &f, &start).unwrap();
        assert!(cal.adjusted);
        // oracle: exhaustive scan of a generated dataset
        let ds = generate_dataset(400, t.v_range, &g, &f, &cal.coeffs, 4).unwrap();
        let all: Vec<usize> = (0..400).collect();
        let (p_lo, p_hi) = ds.field_range(0, &all);
        let span = 132.7 + 231.25;
        assert!((-242.8..=-219.7).contains(&p_lo), "{p_lo}");
        assert!((p_hi - 132.7).abs() <= 0.05 * span);
        let (k_lo, k_hi) = ds.field_range(2, &all);
        let k_span = 0.019015 - 0.000875;
        assert!((k_lo - 0.000875).abs() <= 0.05 * k_span);
        assert!((k_hi - 0.019015).abs() <= 0.05 * k_span);
    }

    #[test]
    fn defaults_are_a_fixed_point() {
        for g in [GeometryConfig::desk(), GeometryConfig::paper()] {
            let c = SurrogateCoeffs::default();
            let cal = calibrate_coefficients(&TargetRanges::default(), &g, &FluidConfig::default(), &c).unwrap();
            assert!(!cal.adjusted, "{:?}", cal.achieved);
            assert_eq!(cal.coeffs, c);
        }
    }

    #[test]
    fn inverted_targets_are_rejected() {
        let t = TargetRanges {
            pressure: (132.7, -231.25),
            ..Default::default()
        };
        let err = calibrate_coefficients(&t, &GeometryConfig::desk(), &FluidConfig::default(), &SurrogateCoeffs::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn unreachable_tke_minimum_is_reported() {
        let t = TargetRanges {
            tke: (0.01, 0.02),
            ..Default::default()
        };
        let err = calibrate_coefficients(&t, &GeometryConfig::desk(), &FluidConfig::default(), &SurrogateCoeffs::default());
        assert!(matches!(err, Err(Error::Calibration(_))));
    }
}
