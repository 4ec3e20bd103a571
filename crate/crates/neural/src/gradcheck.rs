//! Central finite-difference checks of analytic parameter gradients.

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the Frobenius norm.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compare `analytic` with central differences of `loss` at `params`, one
/// entry at a time with step `h`. Returns one report per tensor.
pub fn check_tensors(
    params: &ParamStore,
    analytic: &ParamStore,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<TensorCheck>> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (k, name) in params.names().into_iter().enumerate() {
        let shape = params.tensors()[k].raw_dim();
        let mut diff = 0.0;
        let mut num_sq = 0.0;
        for idx in ndarray::indices(shape) {
            let orig = probe.tensors()[k][idx];
            probe.tensors_mut()[k][idx] = orig + h;
            let plus = loss(&probe)?;
            probe.tensors_mut()[k][idx] = orig - h;
            let minus = loss(&probe)?;
            probe.tensors_mut()[k][idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            diff += (numeric - analytic.tensors()[k][idx]).powi(2);
            num_sq += numeric * numeric;
        }
        let analytic_norm = analytic.tensors()[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        let numeric_norm = num_sq.sqrt();
        let scale = analytic_norm.max(numeric_norm).max(1e-300);
        out.push(TensorCheck { name, relative_error: diff.sqrt() / scale, analytic_norm, numeric_norm });
    }
    Ok(out)
}
