use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::{k_inlet, FluidConfig, GeometryConfig, SurrogateCoeffs, V_RANGE};
use crate::dataset::{GridShape, Provenance, ScenarioDataset};
use crate::error::{Error, Result};
use crate::{seed, N_PARAMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Inlet,
    Bend,
    Outlet,
}

impl GeometryConfig {
    pub fn region(&self, s: f64) -> Region {
        let (a, b) = self.arc_bounds();
        if s < a {
            Region::Inlet
        } else if s <= b {
            Region::Bend
        } else {
            Region::Outlet
        }
    }

    /// Centreline arc length of axial station `i`.
    pub fn station_s(&self, i: usize) -> f64 {
        self.flow_length * i as f64 / (self.n_s - 1) as f64
    }

    /// Normalised chord position `x = 2r/d ∈ [−1, 1]` of transverse station `j`.
    pub fn station_x(&self, j: usize) -> f64 {
        -1.0 + 2.0 * j as f64 / (self.n_r - 1) as f64
    }

    /// Centreline position and unit tangent at arc length `s`.
    fn centreline(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let (a, b) = self.arc_bounds();
        let radius = self.bend_radius();
        let on_arc = |s: f64| {
            let phi = (s - a) / radius;
            (
                [a + radius * phi.sin(), radius * (1.0 - phi.cos())],
                [phi.cos(), phi.sin()],
            )
        };
        if s < a {
            ([s, 0.0], [1.0, 0.0])
        } else if s <= b {
            on_arc(s)
        } else {
            let (p, t) = on_arc(b);
            ([p[0] + (s - b) * t[0], p[1] + (s - b) * t[1]], t)
        }
    }
}

/// `n_s × n_r` nodes on the symmetry plane, s-major, `z = 0`.
pub fn generate_centerplane(geom: &GeometryConfig) -> Array2<f64> {
    let half = 0.5 * geom.d_m;
    let mut out = Array2::zeros((geom.n_points(), 3));
    for i in 0..geom.n_s {
        let (p, t) = geom.centreline(geom.station_s(i));
        let normal = [-t[1], t[0]];
        for j in 0..geom.n_r {
            let r = half * geom.station_x(j);
            let row = i * geom.n_r + j;
            out[[row, 0]] = p[0] + r * normal[0];
            out[[row, 1]] = p[1] + r * normal[1];
        }
    }
    out
}

/// Bend bump `g(s)`: Gaussian centred on the arc midpoint.
fn bump(geom: &GeometryConfig, c: &SurrogateCoeffs, s: f64) -> f64 {
    let (a, b) = geom.arc_bounds();
    let z = (s - 0.5 * (a + b)) / (c.bump_width * geom.d_m);
    (-0.5 * z * z).exp()
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Streamwise wake shape in `[0, 1]`: zero before the bend, rising through it,
/// decaying downstream.
fn wake(geom: &GeometryConfig, c: &SurrogateCoeffs, s: f64) -> f64 {
    let (a, _) = geom.arc_bounds();
    let rise = geom.arc_length() + c.bump_width * geom.d_m;
    let peak = a + rise;
    if s <= a {
        0.0
    } else if s <= peak {
        smoothstep((s - a) / rise)
    } else {
        (-(s - peak) / (c.wake_length * geom.d_m)).exp()
    }
}

/// Amplification shape `h(s, x)`, largest towards the inner wall.
pub(crate) fn tke_shape(geom: &GeometryConfig, c: &SurrogateCoeffs, s: f64, x: f64) -> f64 {
    let lateral = 0.5 * (1.0 + x);
    wake(geom, c, s) * lateral * lateral
}

/// Free-vortex cross-stream profile `(R/ρ)² − 1` with `ρ = R − x·d/2` the local
/// radius of curvature, normalised to 1 at the inner wall. Same sign as `x`;
/// the inner-wall dip is deeper than the outer-wall rise.
pub(crate) fn lateral_profile(geom: &GeometryConfig, x: f64) -> f64 {
    let ratio = geom.bend_radius_ratio;
    let raw = |x: f64| (ratio / (ratio - 0.5 * x)).powi(2) - 1.0;
    raw(x) / raw(1.0)
}

/// Per-unit-dynamic-pressure shape `C_f(L−s)/d − K_b·g·ψ(x)`.
pub(crate) fn pressure_shape(geom: &GeometryConfig, c: &SurrogateCoeffs, s: f64, x: f64) -> f64 {
    c.friction * (geom.flow_length - s) / geom.d_m
        - c.bend_pressure * bump(geom, c, s) * lateral_profile(geom, x)
}

/// `3 × N` fields `[P, V_o, k]` for one inlet velocity, in node order of
/// [`generate_centerplane`].
pub fn generate_fields(
    v_in: f64,
    geom: &GeometryConfig,
    fluid: &FluidConfig,
    coeffs: &SurrogateCoeffs,
) -> Result<Array2<f64>> {
    geom.validate()?;
    fluid.validate()?;
    coeffs.validate()?;
    if !(v_in > 0.0 && v_in.is_finite()) {
        return Err(Error::InvalidArgument(format!("inlet velocity must be positive, got {v_in}")));
    }
    if !(V_RANGE.0..=V_RANGE.1).contains(&v_in) {
        log::warn!("inlet velocity {v_in} outside the reference range {V_RANGE:?}");
    }
    let q = 0.5 * fluid.density * v_in * v_in;
    let k0 = k_inlet(v_in, geom, fluid)?;
    let mut out = Array2::zeros((N_PARAMS, geom.n_points()));
    for i in 0..geom.n_s {
        let s = geom.station_s(i);
        let g = bump(geom, coeffs, s);
        for j in 0..geom.n_r {
            let x = geom.station_x(j);
            let node = i * geom.n_r + j;
            out[[0, node]] = q * pressure_shape(geom, coeffs, s, x);
            out[[1, node]] = v_in * (8.0 / 7.0) * (1.0 - x.abs()).powf(1.0 / 7.0)
                * (1.0 + coeffs.velocity_skew * g * x);
            out[[2, node]] = k0 * (1.0 + coeffs.tke_amplification * tke_shape(geom, coeffs, s, x));
        }
    }
    Ok(out)
}

/// `m` scenarios with inlet velocities drawn uniformly from `v_range`.
pub fn generate_dataset(
    m: usize,
    v_range: (f64, f64),
    geom: &GeometryConfig,
    fluid: &FluidConfig,
    coeffs: &SurrogateCoeffs,
    seed: u64,
) -> Result<ScenarioDataset> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one scenario".into()));
    }
    let (lo, hi) = v_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && lo > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inlet velocity range [{lo}, {hi}] is empty or non-positive"
        )));
    }
    geom.validate()?;
    let coords = generate_centerplane(geom);
    let mut rng = seed::derived_rng(seed, &[0]);
    let velocities: Vec<f64> = (0..m).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let mut fields = Array3::zeros((m, N_PARAMS, geom.n_points()));
    for (j, &v) in velocities.iter().enumerate() {
        let mut f = generate_fields(v, geom, fluid, coeffs)?;
        if coeffs.noise_amplitude > 0.0 {
            let mut noise = seed::derived_rng(coeffs.noise_seed, &[seed, j as u64]);
            f.mapv_inplace(|x| {
                let e: f64 = noise.sample(StandardNormal);
                x * (1.0 + coeffs.noise_amplitude * e)
            });
        }
        fields.slice_mut(s![j, .., ..]).assign(&f);
    }
    let inputs = Array2::from_shape_vec((m, 1), velocities).map_err(|e| Error::Shape(e.to_string()))?;
    let meta = Provenance {
        source: "flowgen".into(),
        grid: Some(GridShape {
            n_s: geom.n_s,
            n_r: geom.n_r,
        }),
        details: json!({
            "geometry": geom,
            "fluid": fluid,
            "coefficients": coeffs,
            "v_range": [lo, hi],
            "n_scenarios": m,
            "seed": seed,
        }),
    };
    ScenarioDataset::new(coords, inputs, fields, meta)
}
