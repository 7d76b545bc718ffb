//! Finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use super::{Graph, NumericsError, Result, Tensor, TensorId};

/// Compare the analytic gradient of a scalar-valued function against
/// central finite differences, componentwise.
///
/// Returns the worst relative error, with the denominator floored at
/// `max(|analytic|, |numeric|, 1e-8)`. The function is handed a fresh
/// graph and the id of the (gradient-tracked) evaluation point.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, TensorId) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(NumericsError::InvalidArgument {
            op: "grad_check",
            detail: alloc::format!("eps must be positive, got {eps}"),
        });
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone().with_grad());
    let y = f(&mut g, x)?;
    if !g.tensor(y).is_scalar() {
        return Err(NumericsError::NonScalarOutput { op: "grad_check" });
    }
    let grads = g.backward(y)?;
    let analytic = grads[x.0].clone().unwrap_or_else(|| alloc::vec![0.0; point.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(point.shape().to_vec(), data)?);
        let y = f(&mut g, x)?;
        g.scalar_value(y)
    };

    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
