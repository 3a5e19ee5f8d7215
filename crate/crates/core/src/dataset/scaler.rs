use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ScenarioDataset, TrainIndices};
use crate::error::{Error, Result};
use crate::{N_PARAMS, PARAM_NAMES};

/// Min-max range of one channel: `scaled = (x − min) / (max − min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::InvalidArgument(format!(
                "channel range needs finite min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Out-of-range values extrapolate linearly.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.span()
    }

    #[inline]
    pub fn invert(&self, scaled: f64) -> f64 {
        self.min + scaled * self.span()
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.min..=self.max).contains(&x)
    }
}

/// Per-channel ranges for the branch input, the three output fields and the
/// three coordinate axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub input: Vec<ChannelRange>,
    pub fields: [ChannelRange; N_PARAMS],
    /// Axes that are constant over the node set (e.g. `z` on a symmetry plane)
    /// get a unit span, so they scale to 0.
    pub coords: [ChannelRange; 3],
}

fn range_of<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn strict_range(channel: &str, (lo, hi): (f64, f64)) -> Result<ChannelRange> {
    if hi > lo {
        Ok(ChannelRange { min: lo, max: hi })
    } else {
        Err(Error::DegenerateChannel {
            channel: channel.to_string(),
            value: lo,
        })
    }
}

/// Fit channel ranges on the training partition only. Coordinates are shared by
/// all scenarios and are fitted over the whole node set.
pub fn fit_scaler(ds: &ScenarioDataset, train: &TrainIndices) -> Result<ScalerParams> {
    let idx = train.as_slice();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a scaler on zero scenarios".into()));
    }
    let input = (0..ds.n_input())
        .map(|c| {
            strict_range(
                &format!("input[{c}]"),
                range_of(idx.iter().map(|&j| &ds.inputs[[j, c]])),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fields = [ChannelRange { min: 0.0, max: 1.0 }; N_PARAMS];
    for (p, slot) in fields.iter_mut().enumerate() {
        *slot = strict_range(PARAM_NAMES[p], ds.field_range(p, idx))?;
    }
    let mut coords = [ChannelRange { min: 0.0, max: 1.0 }; 3];
    for (a, slot) in coords.iter_mut().enumerate() {
        let (lo, hi) = range_of(ds.coords.column(a).iter());
        *slot = if hi > lo {
            ChannelRange { min: lo, max: hi }
        } else {
            log::debug!("coordinate axis {a} is constant ({lo}); using unit span");
            ChannelRange { min: lo, max: lo + 1.0 }
        };
    }
    Ok(ScalerParams {
        input,
        fields,
        coords,
    })
}

impl ScalerParams {
    pub(crate) fn check_compatible(&self, ds: &ScenarioDataset) -> Result<()> {
        if self.input.len() != ds.n_input() {
            return Err(Error::Shape(format!(
                "scaler has {} input channels, dataset has {}",
                self.input.len(),
                ds.n_input()
            )));
        }
        Ok(())
    }

    pub fn scale_inputs(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut out = raw.to_owned();
        for (mut col, r) in out.columns_mut().into_iter().zip(&self.input) {
            col.mapv_inplace(|v| r.apply(v));
        }
        let out_of_range = raw
            .columns()
            .into_iter()
            .zip(&self.input)
            .any(|(c, r)| c.iter().any(|&v| !r.contains(v)));
        if out_of_range {
            log::warn!("branch input outside the fitted range; extrapolating");
        }
        out
    }

    pub fn scale_coords(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut out = raw.to_owned();
        for (mut col, r) in out.columns_mut().into_iter().zip(&self.coords) {
            col.mapv_inplace(|v| r.apply(v));
        }
        out
    }

    /// Scale an `M × 3 × N` field tensor channel-wise.
    pub fn scale_fields(&self, raw: &Array3<f64>) -> Array3<f64> {
        let mut out = raw.clone();
        for (p, r) in self.fields.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(1), p)
                .mapv_inplace(|v| r.apply(v));
        }
        out
    }

    /// Inverse of [`scale_fields`](Self::scale_fields).
    pub fn unscale_fields(&self, scaled: &Array3<f64>) -> Array3<f64> {
        let mut out = scaled.clone();
        for (p, r) in self.fields.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(1), p)
                .mapv_inplace(|v| r.invert(v));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::toy;
    use crate::dataset::{split_dataset, Provenance, SplitSpec};
    use ndarray::{array, Array3};
    use rand::Rng;

    fn pressure() -> ChannelRange {
        ChannelRange::new(-231.25, 132.7).unwrap()
    }

    #[test]
    fn pressure_endpoints_and_midpoint() {
        let p = pressure();
        assert_eq!(p.apply(-231.25), 0.0);
        assert_eq!(p.apply(132.7), 1.0);
        assert!((p.apply(-49.275) - 0.5).abs() < 1e-15);
        assert_eq!(p.invert(0.0), -231.25);
        assert!((p.invert(0.5) + 49.275).abs() < 1e-12);
    }

    #[test]
    fn extrapolates_without_clamping() {
        let p = pressure();
        assert!(p.apply(200.0) > 1.0);
        assert!(p.apply(-300.0) < 0.0);
    }

    #[test]
    fn round_trip_random_values() {
        let p = pressure();
        let scale = p.min.abs().max(p.max.abs());
        let mut rng = crate::seed::rng(5);
        let worst = (0..1000)
            .map(|_| {
                let x = rng.random_range(-300.0..200.0);
                (p.invert(p.apply(x)) - x).abs() / x.abs().max(scale)
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn fit_uses_training_partition_only() {
        let mut ds = toy(10, 4);
        let split = split_dataset(10, &SplitSpec::new(0.8, 1)).unwrap();
        let outsider = split.test.as_slice()[0];
        ds.fields[[outsider, 0, 0]] = 1e6;
        let sc = fit_scaler(&ds, &split.train).unwrap();
        assert!(sc.fields[0].max < 1e6);
    }

    #[test]
    fn paper_ranges_are_recovered() {
        // pressure and TKE channels spanning the reported extremes
        let coords = array![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let inputs = array![[0.63], [0.83]];
        let mut fields = Array3::from_elem((2, 3, 2), 0.005);
        fields[[0, 0, 0]] = -231.25;
        fields[[1, 0, 1]] = 132.7;
        fields[[0, 2, 0]] = 0.000875;
        fields[[1, 2, 1]] = 0.019015;
        fields[[0, 1, 0]] = 0.1;
        fields[[1, 1, 1]] = 0.9;
        let ds = ScenarioDataset::new(coords, inputs, fields, Provenance::new("t")).unwrap();
        let all = TrainIndices::new_unchecked(vec![0, 1]);
        let sc = fit_scaler(&ds, &all).unwrap();
        assert_eq!((sc.fields[0].min, sc.fields[0].max), (-231.25, 132.7));
        assert_eq!((sc.fields[2].min, sc.fields[2].max), (0.000875, 0.019015));
        // z is constant on the plane: unit span, maps to 0
        assert_eq!(sc.coords[2].apply(0.0), 0.0);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let ds = toy(3, 4);
        let mut flat = ds.clone();
        flat.fields.index_axis_mut(ndarray::Axis(1), 1).fill(0.7);
        let all = TrainIndices::new_unchecked(vec![0, 1, 2]);
        assert!(matches!(
            fit_scaler(&flat, &all),
            Err(Error::DegenerateChannel { ref channel, .. }) if channel == "V_o"
        ));
        let one = TrainIndices::new_unchecked(vec![0]);
        assert!(matches!(fit_scaler(&ds, &one), Err(Error::DegenerateChannel { .. })));
    }

    #[test]
    fn scaled_training_fields_span_unit_interval() {
        let ds = toy(8, 6);
        let all = TrainIndices::new_unchecked((0..8).collect());
        let sc = fit_scaler(&ds, &all).unwrap();
        let scaled = sc.scale_fields(&ds.fields);
        for p in 0..3 {
            let ch = scaled.index_axis(ndarray::Axis(1), p);
            let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
        let back = sc.unscale_fields(&scaled);
        let err = (&back - &ds.fields).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12);
    }
}
