//! Central finite-difference checks of recorded gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// `||a - b|| / max(||a||, ||b||)`, or the absolute distance when both
/// norms are below 1e-8.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of the scalar `loss` with respect to
/// every input tensor against central differences of step `h`. Returns the
/// worst per-tensor relative error.
pub fn gradient_check<F>(inputs: &[Tensor], h: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t)).collect();
        let out = loss(&mut g, &vars)?;
        g.scalar(out)
    };
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v)?;
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
