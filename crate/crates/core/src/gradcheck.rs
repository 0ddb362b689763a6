//! Central finite-difference oracle for analytic gradients.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Max over coordinates of `|analytic − numeric| / max(1, |analytic|)`.
///
/// `f` returns the objective value and its analytic gradient at a point; only
/// the value is used at the perturbed points `θ ± h·eᵢ`.
pub fn finite_diff_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    let (_, analytic) = f(theta)?;
    let mut worst = 0.0f64;
    let mut probe = theta.values().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let (plus, _) = f(&Tensor::new(theta.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig - h;
        let (minus, _) = f(&Tensor::new(theta.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.values()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Runs [`finite_diff_check`] on a scalar built on a fresh graph from a single
/// parameter leaf.
pub fn check_graph<B>(build: B, theta: &Tensor, h: f64) -> Result<f64>
where
    B: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check(
        |t| {
            let mut g = Graph::new();
            let p = g.param(t.clone());
            let root = build(&mut g, p)?;
            let grads = g.backward(root)?;
            Ok((g.value(root).item(), grads.get_or_zeros(p, t)))
        },
        theta,
        h,
    )
}
