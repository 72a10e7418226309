//! Central finite differences for checking tape gradients.

use super::tensor::Tensor;
use crate::error::Result;

/// Numerical gradient of a scalar function of several tensors, using central
/// differences with step `h`.
pub fn numeric_gradient<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, floor)`: symmetric, and bounded for
/// near-zero gradients.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / (a.norm_l2() + b.norm_l2()).max(floor)
}
