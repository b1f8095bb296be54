//! Numerical gradient verification.

use super::array::Tensor;
use super::graph::{Graph, Var};
use crate::error::Result;

/// Default central finite-difference step.
const STEP: f64 = 1e-3;

/// Compare the analytic gradient of a scalar-valued tensor function against
/// central finite differences with the default step (1e-3).
///
/// `f` rebuilds the computation from scratch on every call; `x` is the tensor
/// being differentiated. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_with_step(f, x, STEP)
}

/// [`grad_check`] with an explicit finite-difference step. Smaller steps cut
/// the `h^2` truncation term for sharply curved compositions; larger steps
/// cut the `eps*|f|/(2h)` roundoff term when gradients are near zero.
pub fn grad_check_with_step<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |t: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(t.clone());
        let loss = f(&mut g, xv)?;
        g.value(loss).item()
    };

    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
