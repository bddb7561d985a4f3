//! Central-difference validation of tape gradients.

use super::{GradTape, Scalar, Tensor, Var};
use crate::error::Result;

/// Compares backward-pass gradients of a scalar-valued function against
/// central finite differences at `point`, one coordinate at a time.
///
/// Returns the maximum relative error over all coordinates, with the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&GradTape<T>, &[Var<T>]) -> Result<Var<T>>,
{
    // analytic gradients at the center point
    let tape = GradTape::new();
    let vars: Vec<Var<T>> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(&loss)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|v| v.grad()).collect();

    let value_at = |tensors: &[Tensor<T>]| -> Result<T> {
        let tape = GradTape::new();
        let vars: Vec<Var<T>> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let two_eps = eps + eps;
    let floor = T::from_f64(1e-8);
    let mut max_rel = T::zero();
    let mut work: Vec<Tensor<T>> = point.to_vec();
    for i in 0..point.len() {
        for j in 0..point[i].len() {
            let orig = point[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let f_plus = value_at(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let f_minus = value_at(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / two_eps;
            let a = analytic[i].data()[j];
            let denom = numeric.abs().max(a.abs()).max(floor);
            let rel = (numeric - a).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
