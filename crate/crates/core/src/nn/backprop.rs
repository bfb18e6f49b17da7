//! Forward evaluation and reverse-mode gradients.

use ndarray::Array2;

use super::ParamVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward pass for a batch `x` of shape `(n, input_dim)`; returns
/// `(n, output_dim)`. Deterministic: identical inputs give bit-identical
/// outputs within one build.
pub fn forward<T: Scalar>(params: &ParamVector<T>, x: &Array2<T>) -> Result<Array2<T>> {
    Ok(run_forward(params, x)?.pop_output())
}

/// Forward pass that keeps per-layer activations for a later backward sweep.
pub struct Backprop<T> {
    /// `acts[0]` is the input batch; `acts[l+1]` the output of weight layer `l`
    /// (post-activation for hidden layers, affine for the last).
    acts: Vec<Array2<T>>,
}

impl<T: Scalar> Backprop<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("forward produced layers")
    }

    fn pop_output(mut self) -> Array2<T> {
        self.acts.pop().expect("forward produced layers")
    }
}

/// Runs the forward pass and returns the full activation trace, for callers
/// that follow up with [`backward_trace`] and want to reuse the forward work.
pub fn run_forward<T: Scalar>(params: &ParamVector<T>, x: &Array2<T>) -> Result<Backprop<T>> {
    let arch = params.arch();
    if x.ncols() != arch.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("input with {} columns", arch.input_dim()),
            format!("{} columns", x.ncols()),
        ));
    }
    let n_layers = arch.n_layers();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for l in 0..n_layers {
        let w = params.weight(l);
        let b = params.bias(l);
        let mut z = acts[l].dot(&w.t());
        z += &b;
        if l + 1 < n_layers {
            z.mapv_inplace(|v| arch.hidden.apply(v));
        }
        acts.push(z);
    }
    Ok(Backprop { acts })
}

/// Gradient of a scalar loss with respect to every parameter, given
/// `loss_grad = ∂L/∂output` of shape `(n, output_dim)`.
pub fn backward<T: Scalar>(
    params: &ParamVector<T>,
    x: &Array2<T>,
    loss_grad: &Array2<T>,
) -> Result<ParamVector<T>> {
    let trace = run_forward(params, x)?;
    let (grad, _) = backward_trace(params, &trace, loss_grad, false)?;
    Ok(grad)
}

/// As [`backward`], additionally returning `∂L/∂x` of the input batch.
pub fn backward_with_input_grad<T: Scalar>(
    params: &ParamVector<T>,
    x: &Array2<T>,
    loss_grad: &Array2<T>,
) -> Result<(ParamVector<T>, Array2<T>)> {
    let trace = run_forward(params, x)?;
    let (grad, input) = backward_trace(params, &trace, loss_grad, true)?;
    Ok((grad, input.expect("requested input gradient")))
}

/// Backward sweep over a stored forward trace. `want_input_grad` additionally
/// propagates the loss gradient through to the input batch.
pub fn backward_trace<T: Scalar>(
    params: &ParamVector<T>,
    trace: &Backprop<T>,
    loss_grad: &Array2<T>,
    want_input_grad: bool,
) -> Result<(ParamVector<T>, Option<Array2<T>>)> {
    let arch = params.arch().clone();
    let out_shape = trace.output().dim();
    if loss_grad.dim() != out_shape {
        return Err(Error::shape(
            "backward",
            format!("loss gradient {}x{}", out_shape.0, out_shape.1),
            format!("{}x{}", loss_grad.nrows(), loss_grad.ncols()),
        ));
    }
    let n_layers = arch.n_layers();
    let mut grad = ParamVector::zeros(arch.clone());
    // delta = ∂L/∂z_l for the layer being processed (output layer is affine).
    let mut delta = loss_grad.clone();
    let mut input_grad = None;
    for l in (0..n_layers).rev() {
        let h_in = &trace.acts[l];
        grad.weight_mut(l).assign(&delta.t().dot(h_in));
        grad.bias_mut(l).assign(&delta.sum_axis(ndarray::Axis(0)));
        if l > 0 {
            let mut prev = delta.dot(&params.weight(l));
            // trace.acts[l] holds act(z_{l-1}); the derivative is a function
            // of that output for every supported activation.
            prev.zip_mut_with(&trace.acts[l], |g, &h| {
                *g = *g * arch.hidden.derivative_from_output(h)
            });
            delta = prev;
        } else if want_input_grad {
            input_grad = Some(delta.dot(&params.weight(0)));
        }
    }
    Ok((grad, input_grad))
}
