use crate::error::{AdError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor so that entries where both gradients are ~0 compare in
/// absolute terms.
const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the backward-pass gradient of a scalar function with central
/// differences `(f(x+h) − f(x−h)) / 2h`, elementwise, and returns the largest
/// relative error.
///
/// `f` receives a fresh graph and the input leaf on every evaluation.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.grad_tensor(xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.param(probe);
        let out = f(&mut g, v)?;
        if g.value(out).numel() != 1 {
            return Err(AdError::NotScalar(g.shape(out).to_vec()));
        }
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    for k in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[k] += h;
        let mut minus = x.clone();
        minus.data_mut()[k] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[k], numeric));
    }
    Ok(worst)
}
