use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::mlp::{DropoutSpec, Mlp};
use super::{Gradients, Parameters};
use crate::error::{Error, Result};

/// Largest model the finite-difference check will perturb exhaustively.
pub const MAX_GRADCHECK_PARAMS: usize = 10_000;

const FD_STEP: f64 = 1e-5;
// Relative errors are measured against max(|analytic|, |numeric|, FLOOR) so that
// parameters with vanishing gradients are judged on absolute error instead.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub worst_relative_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare `analytic` gradients against central differences of `objective`,
/// perturbing every parameter of `model` in turn.
pub fn check_gradients<M, F>(
    model: &mut M,
    mut objective: F,
    analytic: &[Vec<f64>],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    M: Parameters,
    F: FnMut(&M) -> Result<f64>,
{
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gradient-check tolerance must be positive, got {tolerance}"
        )));
    }
    let total = model.num_params();
    if total > MAX_GRADCHECK_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "model has {total} parameters; finite differences are limited to {MAX_GRADCHECK_PARAMS}"
        )));
    }
    let layout: Vec<(String, usize)> = model
        .param_blocks()
        .into_iter()
        .map(|(n, b)| (n, b.len()))
        .collect();
    if layout.len() != analytic.len()
        || layout.iter().zip(analytic).any(|((_, n), g)| *n != g.len())
    {
        return Err(Error::Shape(
            "analytic gradient blocks do not match the parameter layout".into(),
        ));
    }

    let mut report = GradCheckReport {
        worst_relative_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        checked: 0,
        tolerance,
        passed: true,
    };
    for (block, (name, len)) in layout.iter().enumerate() {
        for i in 0..*len {
            let original = model.param_blocks()[block].1[i];
            set_param(model, block, i, original + FD_STEP);
            let plus = objective(model)?;
            set_param(model, block, i, original - FD_STEP);
            let minus = objective(model)?;
            set_param(model, block, i, original);

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[block][i];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > report.worst_relative_error || report.checked == 0 {
                report.worst_relative_error = rel;
                report.worst_block = name.clone();
                report.worst_index = i;
            }
            report.checked += 1;
        }
    }
    report.passed = report.worst_relative_error < tolerance;
    Ok(report)
}

fn set_param<M: Parameters>(model: &mut M, block: usize, index: usize, value: f64) {
    let mut blocks = model.param_blocks_mut();
    blocks[block].1[index] = value;
}

/// Finite-difference check of [`Mlp::backward`] for a loss on the network output.
///
/// `loss` returns the scalar loss and its gradient with respect to the output.
pub fn finite_diff_check<L>(
    mlp: &Mlp,
    loss: L,
    input: ArrayView2<f64>,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    if mlp.param_count() > MAX_GRADCHECK_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "finite-difference check is limited to {MAX_GRADCHECK_PARAMS} parameters, model has {}",
            mlp.param_count()
        )));
    }
    let inference = DropoutSpec::inference();
    let (out, cache) = mlp.forward(input, &inference)?;
    let (_, upstream) = loss(&out);
    let analytic = mlp.backward(&cache, upstream.view())?.to_flat_blocks();
    let mut probe = mlp.clone();
    check_gradients(
        &mut probe,
        |m: &Mlp| Ok(loss(&m.predict(input)?).0),
        &analytic,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use ndarray::array;

    fn mse_loss(target: Array2<f64>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
        move |out: &Array2<f64>| {
            let diff = out - &target;
            let n = diff.len() as f64;
            (diff.mapv(|d| d * d).sum() / n, diff.mapv(|d| 2.0 * d / n))
        }
    }

    #[test]
    fn linear_quadratic_is_near_exact() {
        let layer = DenseLayer::xavier(3, 2, Activation::Linear, 4).unwrap();
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let x = array![[0.2, -0.4, 1.0], [0.7, 0.1, -0.3]];
        let report =
            finite_diff_check(&mlp, mse_loss(array![[0.5, -1.0], [0.0, 2.0]]), x.view(), 1e-8)
                .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.worst_relative_error < 1e-8);
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn relu_net_passes() {
        let mlp = Mlp::new(&[4, 5, 5, 3], 17).unwrap();
        let x = array![[0.3, -0.1, 0.8, 0.2], [-0.6, 0.4, 0.1, 0.9], [0.2, 0.2, -0.7, 0.5]];
        let target = Array2::from_elem((3, 3), 0.25);
        let report = finite_diff_check(&mlp, mse_loss(target), x.view(), 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut mlp = Mlp::new(&[2, 4, 2], 3).unwrap();
        let x = array![[0.5, -0.25], [0.1, 0.9]];
        let loss = mse_loss(array![[1.0, 0.0], [0.0, 1.0]]);
        let (out, cache) = mlp.forward(x.view(), &DropoutSpec::inference()).unwrap();
        let (_, up) = loss(&out);
        let doubled: Vec<Vec<f64>> = mlp
            .backward(&cache, up.view())
            .unwrap()
            .to_flat_blocks()
            .into_iter()
            .map(|b| b.into_iter().map(|g| 2.0 * g).collect())
            .collect();
        let report =
            check_gradients(&mut mlp, |m: &Mlp| Ok(loss(&m.predict(x.view())?).0), &doubled, 1e-4)
                .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn tolerance_must_be_positive() {
        let mlp = Mlp::new(&[1, 1], 0).unwrap();
        let err = finite_diff_check(&mlp, mse_loss(array![[0.0]]), array![[1.0]].view(), 0.0);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn oversized_model_rejected() {
        let mlp = Mlp::new(&[100, 101, 1], 0).unwrap();
        let x = Array2::zeros((1, 100));
        let err = finite_diff_check(&mlp, mse_loss(array![[0.0]]), x.view(), 1e-4);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
