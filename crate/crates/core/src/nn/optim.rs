//! First-order optimizers over flat parameter arrays.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Update rule. Both operate elementwise on a flat parameter array, so the
/// same state drives network parameters and embedding matrices alike.
#[derive(Debug, Clone, Copy)]
pub enum Optimizer<T> {
    Sgd {
        lr: T,
    },
    Adam {
        lr: T,
        beta1: T,
        beta2: T,
        eps: T,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: T) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Adam with the conventional defaults β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn adam(lr: T) -> Self {
        Optimizer::Adam {
            lr,
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
        }
    }
}

/// Per-parameter optimizer state (Adam moments; empty for SGD).
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    m: Array1<T>,
    v: Array1<T>,
    t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: Array1::zeros(len),
            v: Array1::zeros(len),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Applies one update in place. Gradient entries must be finite; the first
/// non-finite entry is reported by flat index.
pub fn optimizer_step<T: Scalar>(
    opt: &Optimizer<T>,
    state: &mut OptimizerState<T>,
    params: &mut Array1<T>,
    grad: &Array1<T>,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "optimizer_step",
            format!("{} parameters", params.len()),
            format!("{} gradient entries, {} state entries", grad.len(), state.m.len()),
        ));
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric("optimizer_step gradient", Some(bad)));
    }
    state.t += 1;
    match *opt {
        Optimizer::Sgd { lr } => {
            params.zip_mut_with(grad, |p, &g| *p = *p - lr * g);
        }
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let t = T::cast(state.t as f64);
            let bc1 = T::one() - beta1.powf(t);
            let bc2 = T::one() - beta2.powf(t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = beta1 * state.m[i] + (T::one() - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (T::one() - beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn sgd_single_step() {
        // lr=0.1, p=[1], g=[2] -> [0.8].
        let mut p = array![1.0];
        let mut st = OptimizerState::new(1);
        optimizer_step(&Optimizer::sgd(0.1), &mut st, &mut p, &array![2.0]).unwrap();
        assert_relative_eq!(p[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        // Bias correction makes the first update -lr * g/|g| up to eps.
        let mut p = array![0.0];
        let mut st = OptimizerState::new(1);
        optimizer_step(&Optimizer::adam(0.001), &mut st, &mut p, &array![1.0]).unwrap();
        assert_relative_eq!(p[0], -0.001, epsilon = 1e-9);
    }

    #[test]
    fn ten_sgd_steps_on_quadratic_follow_geometric_decay() {
        // L = p^2, grad = 2p, lr = 0.1: p <- 0.8 p, so p_10 = 0.8^10.
        let mut p = array![1.0];
        let mut st = OptimizerState::new(1);
        let opt = Optimizer::sgd(0.1);
        for _ in 0..10 {
            let g = array![2.0 * p[0]];
            optimizer_step(&opt, &mut st, &mut p, &g).unwrap();
        }
        assert_relative_eq!(p[0], 0.8f64.powi(10), epsilon = 1e-12);
        assert_relative_eq!(p[0], 0.1073741824, epsilon = 1e-10);
    }

    #[test]
    fn non_finite_gradient_names_index() {
        let mut p = array![0.0, 0.0, 0.0];
        let mut st = OptimizerState::new(3);
        let err = optimizer_step(
            &Optimizer::sgd(0.1),
            &mut st,
            &mut p,
            &array![1.0, f64::NAN, 2.0],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("index 1"), "{msg}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = array![3.0f64];
        let mut st = OptimizerState::new(1);
        let opt = Optimizer::adam(0.05);
        for _ in 0..2000 {
            let g = array![2.0 * p[0]];
            optimizer_step(&opt, &mut st, &mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-3, "p = {}", p[0]);
    }
}
