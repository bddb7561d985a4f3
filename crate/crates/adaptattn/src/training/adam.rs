use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Adaptive-moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step with bias correction:
/// `m ← β₁m + (1-β₁)g`, `v ← β₂v + (1-β₂)g²`,
/// `θ ← θ − lr·m̂/(√v̂ + ε)` with `m̂ = m/(1-β₁ᵗ)`, `v̂ = v/(1-β₂ᵗ)`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let beta1 = T::from_f64(hyper.beta1);
    let beta2 = T::from_f64(hyper.beta2);
    let eps = T::from_f64(hyper.eps);
    let lr = T::from_f64(hyper.learning_rate);
    let corr1 = T::one() - beta1.powi(t);
    let corr2 = T::one() - beta2.powi(t);

    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.shape() != grad.shape() {
            return Err(Error::Contract(format!(
                "adam_step: param shape {:?} vs grad shape {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        for ((p, &g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *m = beta1 * *m + (T::one() - beta1) * g;
            *v = beta2 * *v + (T::one() - beta2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = t(&[1.0, -2.0]);
        let grads = vec![t(&[0.0, 0.0])];
        let mut state = AdamState::new(&[&p]);
        let hyper = AdamHyper::default();
        let before = p.clone();
        adam_step(&mut [&mut p], &grads, &mut state, &hyper).unwrap();
        assert_eq!(p.data(), before.data());
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // at t=1: m̂ = g, v̂ = g², update = -lr·g/(|g| + ε) ≈ -lr·sign(g)
        let g = 0.37f64;
        let lr = 1e-3;
        let mut p = t(&[5.0]);
        let grads = vec![t(&[g])];
        let mut state = AdamState::new(&[&p]);
        let hyper = AdamHyper {
            learning_rate: lr,
            ..AdamHyper::default()
        };
        adam_step(&mut [&mut p], &grads, &mut state, &hyper).unwrap();
        let expect = 5.0 - lr * g / (g.abs() + hyper.eps);
        assert!((p.data()[0] - expect).abs() < 1e-15);
        assert!((p.data()[0] - (5.0 - lr)).abs() < 1e-6);
    }

    #[test]
    fn descends_a_quadratic() {
        // loss = x², gradient 2x; two steps must reduce the loss
        let mut x = t(&[3.0]);
        let mut state = AdamState::new(&[&x]);
        let hyper = AdamHyper {
            learning_rate: 0.1,
            ..AdamHyper::default()
        };
        let loss0 = x.data()[0] * x.data()[0];
        for _ in 0..2 {
            let g = t(&[2.0 * x.data()[0]]);
            adam_step(&mut [&mut x], &[g], &mut state, &hyper).unwrap();
        }
        let loss1 = x.data()[0] * x.data()[0];
        assert!(loss1 < loss0, "{loss1} !< {loss0}");
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut p = t(&[1.0, 2.0]);
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &grads, &mut state, &AdamHyper::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
