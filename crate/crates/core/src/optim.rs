//! Bias-corrected Adam over [`AdapterParams`].

use crate::adapter::{AdapterGrads, AdapterParams, TENSOR_NAMES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: AdapterGrads,
    pub v: AdapterGrads,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &AdapterParams) -> Self {
        Self {
            m: AdapterGrads::zeros_like(params),
            v: AdapterGrads::zeros_like(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. Nothing is modified when the gradients are
/// rejected.
pub fn adam_step(
    params: &mut AdapterParams,
    grads: &AdapterGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grads.shape_matches(params) || !state.m.shape_matches(params) || !state.v.shape_matches(params) {
        return Err(crate::shape_err(
            "adam_step",
            "gradients and moments shaped like the parameters",
            "different shapes",
        ));
    }
    for (name, g) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: name });
        }
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "learning rate must be positive, got {lr}"
        )));
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);

    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    let ps = params.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use alloc::vec;

    fn scalar_params(x: f64) -> AdapterParams {
        AdapterParams::from_parts(
            Matrix::from_rows(&[[x]]).unwrap(),
            vec![0.0],
            Matrix::zeros(1, 1),
            vec![0.0],
        )
        .unwrap()
    }

    fn grad_on_w1(params: &AdapterParams, g: f64) -> AdapterGrads {
        let mut grads = AdapterGrads::zeros_like(params);
        grads.w1[(0, 0)] = g;
        grads
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = scalar_params(0.3);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = AdapterGrads::zeros_like(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        let g = grad_on_w1(&p, 1.0);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        // m̂ = 1, v̂ = 1
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.w1[(0, 0)] - expected).abs() < 1e-16);
        assert!((p.w1[(0, 0)] - -0.09999999).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_moves_lr_per_step() {
        let lr = 1e-3;
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        let g = grad_on_w1(&p, 0.37);
        let mut prev = 0.0;
        for step in 1..=1000 {
            adam_step(&mut p, &g, &mut s, lr).unwrap();
            let x = p.w1[(0, 0)];
            assert!(x < prev);
            if step > 10 {
                assert!(((prev - x) - lr).abs() < 1e-6 * lr * 100.0);
            }
            prev = x;
        }
        assert!((prev + 1000.0 * lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        let mut g = AdapterGrads::zeros_like(&p);
        g.b2[0] = f64::INFINITY;
        let err = adam_step(&mut p, &g, &mut s, 0.1).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { tensor: "b2" });
        assert_eq!(s.t, 0);
    }
}
