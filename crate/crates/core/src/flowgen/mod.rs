//! Analytic stand-in for centre-plane CFD fields in a scaled hot-leg elbow.
//!
//! Geometry: straight inlet run, circular arc turning by `elbow_angle`, straight
//! outlet run, all on the `z = 0` symmetry plane. Stations are indexed by arc
//! length `s ∈ [0, L]` along the centreline and by chord offset
//! `r ∈ [−d/2, +d/2]` along the left normal. `r = +d/2` is the inner wall of the
//! bend (towards the centre of curvature).
//!
//! With `x = 2r/d`, `g(s)` a Gaussian over the arc, `ψ(x)` the free-vortex
//! cross-stream profile (sign of `x`, 1 at the inner wall) and `h(s, x) ≥ 0`:
//!
//! ```text
//! V_o = v·(8/7)(1−|x|)^{1/7}·(1 + α·g·x)
//! P   = ½ρv²·[C_f·(L−s)/d − K_b·g·ψ(x)]
//! k   = k_inlet(v)·[1 + A_k·h]
//! ```

mod calibrate;
mod fields;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibrate::{calibrate_coefficients, field_extrema, Calibration, TargetRanges};
pub use fields::{generate_centerplane, generate_dataset, generate_fields, Region};

/// Paper-reported inlet velocity range, m/s at model scale.
pub const V_RANGE: (f64, f64) = (0.63, 0.83);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Model pipe inner diameter, m.
    pub d_m: f64,
    /// Centreline length of the flow domain, m.
    pub flow_length: f64,
    /// Turning angle of the bend, degrees.
    pub elbow_angle: f64,
    /// Axial stations.
    pub n_s: usize,
    /// Transverse stations (walls included).
    pub n_r: usize,
    /// Bend centreline radius in diameters.
    #[serde(default = "default_bend_ratio")]
    pub bend_radius_ratio: f64,
}

fn default_bend_ratio() -> f64 {
    1.5
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GeometryConfig {
    /// 63 × 20 = 1,260 nodes.
    pub fn desk() -> Self {
        Self {
            d_m: 0.025,
            flow_length: 0.150,
            elbow_angle: 120.0,
            n_s: 63,
            n_r: 20,
            bend_radius_ratio: default_bend_ratio(),
        }
    }

    /// 189 × 60 = 11,340 nodes.
    pub fn paper() -> Self {
        Self {
            n_s: 189,
            n_r: 60,
            ..Self::desk()
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_s * self.n_r
    }

    pub fn bend_radius(&self) -> f64 {
        self.bend_radius_ratio * self.d_m
    }

    pub fn arc_length(&self) -> f64 {
        self.bend_radius() * self.elbow_angle.to_radians()
    }

    /// `(start, end)` of the arc in centreline arc length.
    pub fn arc_bounds(&self) -> (f64, f64) {
        let straight = 0.5 * (self.flow_length - self.arc_length());
        (straight, straight + self.arc_length())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_m > 0.0 && self.flow_length > 0.0 && self.bend_radius_ratio > 0.0) {
            return Err(Error::Config(
                "geometry: d_m, flow_length and bend_radius_ratio must be positive".into(),
            ));
        }
        if !(self.elbow_angle > 0.0 && self.elbow_angle < 180.0) {
            return Err(Error::Config(format!(
                "geometry: elbow_angle must lie in (0, 180) degrees, got {}",
                self.elbow_angle
            )));
        }
        if self.n_s < 2 || self.n_r < 2 {
            return Err(Error::Config("geometry: n_s and n_r must be ≥ 2".into()));
        }
        if self.arc_length() >= self.flow_length {
            return Err(Error::Config(format!(
                "geometry: bend arc ({:.4} m) does not fit in flow length {} m",
                self.arc_length(),
                self.flow_length
            )));
        }
        if 0.5 * self.d_m >= self.bend_radius() {
            return Err(Error::Config("geometry: bend radius must exceed d_m/2".into()));
        }
        Ok(())
    }
}

/// Full-scale to model geometric scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRelation {
    pub lambda: f64,
    /// Full-scale diameter, m.
    pub d_a: f64,
}

impl Default for ScalingRelation {
    fn default() -> Self {
        Self {
            lambda: 31.5,
            d_a: 0.7874,
        }
    }
}

impl ScalingRelation {
    /// `lambda` must equal `d_a / d_m` within 0.1%.
    pub fn check_consistent(&self, geom: &GeometryConfig) -> Result<()> {
        let implied = self.d_a / geom.d_m;
        if ((implied - self.lambda) / self.lambda).abs() > 1e-3 {
            return Err(Error::Config(format!(
                "scaling factor {} disagrees with d_a/d_m = {implied:.4}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    /// kg/m³. Representative value, not measured data.
    pub density: f64,
    /// m²/s. Representative value, not measured data.
    pub kinematic_viscosity: f64,
    /// K, metadata only.
    pub inlet_temperature: f64,
}

impl Default for FluidConfig {
    fn default() -> Self {
        Self {
            density: 705.0,
            kinematic_viscosity: 1.25e-7,
            inlet_temperature: 594.3,
        }
    }
}

impl FluidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.kinematic_viscosity > 0.0) {
            return Err(Error::Config("fluid: density and viscosity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateCoeffs {
    /// `C_f`
    pub friction: f64,
    /// `K_b`
    pub bend_pressure: f64,
    /// `α`, must stay below 1 so velocity is non-negative.
    pub velocity_skew: f64,
    /// `A_k`
    pub tke_amplification: f64,
    /// `σ`, Gaussian width of the bend bump in diameters.
    pub bump_width: f64,
    /// Decay length of the wake TKE in diameters.
    #[serde(default = "default_wake")]
    pub wake_length: f64,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_wake() -> f64 {
    4.0
}

impl Default for SurrogateCoeffs {
    /// Calibrated against the reported pressure and TKE ranges on the default
    /// fluid and geometry.
    fn default() -> Self {
        Self {
            friction: DEFAULT_FRICTION,
            bend_pressure: DEFAULT_BEND_PRESSURE,
            velocity_skew: 0.3,
            tke_amplification: DEFAULT_TKE_AMPLIFICATION,
            bump_width: 1.0,
            wake_length: default_wake(),
            noise_amplitude: 0.0,
            noise_seed: 0,
        }
    }
}

const DEFAULT_FRICTION: f64 = 0.05184;
const DEFAULT_BEND_PRESSURE: f64 = 1.1078;
const DEFAULT_TKE_AMPLIFICATION: f64 = 13.516;

impl SurrogateCoeffs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.friction,
            self.bend_pressure,
            self.velocity_skew,
            self.tke_amplification,
            self.bump_width,
            self.wake_length,
            self.noise_amplitude,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("surrogate coefficients must be finite".into()));
        }
        if self.noise_amplitude < 0.0 {
            return Err(Error::Config("noise amplitude must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.velocity_skew.abs()) {
            return Err(Error::Config("velocity skew must satisfy |α| < 1".into()));
        }
        if self.bump_width <= 0.0 || self.wake_length <= 0.0 {
            return Err(Error::Config("bump width and wake length must be positive".into()));
        }
        if self.friction < 0.0 || self.tke_amplification < 0.0 {
            return Err(Error::Config("friction and TKE amplification must be ≥ 0".into()));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Model geometry from the full-scale diameter: `d_m = d_a / λ`.
pub fn scaled_geometry(d_a: f64, lambda: f64) -> Result<GeometryConfig> {
    positive("d_a", d_a)?;
    positive("lambda", lambda)?;
    Ok(GeometryConfig {
        d_m: d_a / lambda,
        ..GeometryConfig::desk()
    })
}

/// Constant flow rate per unit volume gives `v_m / v_a = l_m / l_a`.
pub fn velocity_ratio(l_m: f64, l_a: f64) -> Result<f64> {
    positive("l_m", l_m)?;
    positive("l_a", l_a)?;
    Ok(l_m / l_a)
}

/// `l_a = d_m × l_m`, evaluated as printed. Dimensionally inconsistent; the caller
/// picks the units.
pub fn actual_flow_length(d_m: f64, l_m: f64) -> Result<f64> {
    positive("d_m", d_m)?;
    positive("l_m", l_m)?;
    Ok(d_m * l_m)
}

/// `Re = v·d/ν`.
pub fn reynolds_number(v: f64, d: f64, nu: f64) -> Result<f64> {
    positive("velocity", v)?;
    positive("diameter", d)?;
    positive("viscosity", nu)?;
    Ok(v * d / nu)
}

/// `Re_m = Re_a · λ / d_m`, evaluated as printed with `d_m` in whatever unit
/// the caller records (millimetres in the reference case).
pub fn reynolds_model(re_a: f64, lambda: f64, d_m: f64) -> Result<f64> {
    positive("Re_a", re_a)?;
    positive("lambda", lambda)?;
    positive("d_m", d_m)?;
    Ok(re_a * lambda / d_m)
}

/// Inlet turbulence intensity `I = 0.16 · Re^(−1/8)`.
pub fn turbulence_intensity(re: f64) -> Result<f64> {
    positive("Re", re)?;
    Ok(0.16 * re.powf(-0.125))
}

/// Inlet TKE from `I = √(2k/3) / U`: `k = (3/2)(I·U)²`.
pub fn k_inlet(v_in: f64, geom: &GeometryConfig, fluid: &FluidConfig) -> Result<f64> {
    let i = turbulence_intensity(reynolds_number(v_in, geom.d_m, fluid.kinematic_viscosity)?)?;
    Ok(1.5 * (i * v_in).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scaled_geometry_examples() {
        assert_relative_eq!(scaled_geometry(0.7874, 31.5).unwrap().d_m, 0.025, max_relative = 1e-3);
        assert_eq!(scaled_geometry(0.3, 1.0).unwrap().d_m, 0.3);
        assert_eq!(scaled_geometry(1.0, 4.0).unwrap().d_m, 0.25);
        assert!(matches!(scaled_geometry(0.0, 4.0), Err(Error::InvalidArgument(_))));
        assert!(scaled_geometry(1.0, -1.0).is_err());
        ScalingRelation::default().check_consistent(&GeometryConfig::desk()).unwrap();
    }

    #[test]
    fn printed_relations_are_verbatim() {
        assert_eq!(velocity_ratio(0.15, 4.725).unwrap(), 0.15 / 4.725);
        assert_eq!(actual_flow_length(25.0, 150.0).unwrap(), 3750.0);
        assert_relative_eq!(reynolds_model(1e6, 31.5, 25.0).unwrap(), 1.26e6, max_relative = 1e-12);
        assert!(reynolds_model(1e6, 31.5, 0.0).is_err());
    }

    #[test]
    fn reynolds_examples() {
        assert_eq!(reynolds_number(1.0, 1.0, 1.0).unwrap(), 1.0);
        let a = reynolds_number(0.7, 0.025, 1e-6).unwrap();
        let b = reynolds_number(1.4, 0.025, 1e-6).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
        assert!(reynolds_number(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn intensity_examples() {
        // independent evaluation: 0.16 / 10^(5/8)
        let oracle = 0.16 / 10f64.powf(0.625);
        assert_relative_eq!(turbulence_intensity(1e5).unwrap(), oracle, max_relative = 1e-14);
        assert!((turbulence_intensity(1e5).unwrap() - 0.03794).abs() < 5e-6);
        assert_eq!(turbulence_intensity(1.0).unwrap(), 0.16);
        assert!(turbulence_intensity(1e4).unwrap() > turbulence_intensity(1e5).unwrap());
        assert!(turbulence_intensity(0.0).is_err());
    }

    #[test]
    fn k_inlet_inverts_intensity_definition() {
        let g = GeometryConfig::desk();
        let f = FluidConfig::default();
        let v = 0.7;
        let k = k_inlet(v, &g, &f).unwrap();
        let i = turbulence_intensity(reynolds_number(v, g.d_m, f.kinematic_viscosity).unwrap()).unwrap();
        assert_relative_eq!((2.0 * k / 3.0).sqrt() / v, i, max_relative = 1e-12);
    }

    #[test]
    fn geometry_validation() {
        let g = GeometryConfig::desk();
        g.validate().unwrap();
        assert_eq!(g.n_points(), 1260);
        assert_eq!(GeometryConfig::paper().n_points(), 11_340);
        let (a, b) = g.arc_bounds();
        assert_relative_eq!(a, g.flow_length - b, max_relative = 1e-12);
        for bad in [
            GeometryConfig { elbow_angle: 180.0, ..g.clone() },
            GeometryConfig { elbow_angle: 0.0, ..g.clone() },
            GeometryConfig { d_m: -1.0, ..g.clone() },
            GeometryConfig { n_r: 1, ..g.clone() },
            GeometryConfig { bend_radius_ratio: 10.0, ..g.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn coefficient_validation() {
        SurrogateCoeffs::default().validate().unwrap();
        let bad = SurrogateCoeffs { noise_amplitude: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SurrogateCoeffs { friction: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
