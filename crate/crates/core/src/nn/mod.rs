//! Minimal dense-MLP engine: forward, reverse-mode gradients, optimizers,
//! and a flat parameter representation.
//!
//! Layer `l` maps `width[l]` inputs to `width[l+1]` outputs as
//! `z = x Wᵀ + b` with `W` stored row-major `(out, in)`. The hidden
//! activation applies to every layer except the last; the output layer is
//! always affine. Classification callers treat outputs as logits and apply
//! softmax themselves ([`OutputKind::SoftmaxDeferred`] records that intent
//! without changing `forward`).

mod backprop;
mod blob;
mod optim;

pub use backprop::{backward, backward_trace, backward_with_input_grad, forward, run_forward, Backprop};
pub use blob::{read_param_blob, write_param_blob};
pub use optim::{optimizer_step, Optimizer, OptimizerState};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the activation value `h = act(z)`.
    pub(crate) fn derivative_from_output<T: Scalar>(self, h: T) -> T {
        match self {
            Activation::Tanh => T::one() - h * h,
            Activation::Relu => {
                if h > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// What the raw network outputs mean to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Outputs are the prediction itself (regression).
    Identity,
    /// Outputs are logits; samplers apply softmax, losses use them directly.
    SoftmaxDeferred,
}

impl OutputKind {
    pub fn name(self) -> &'static str {
        match self {
            OutputKind::Identity => "identity",
            OutputKind::SoftmaxDeferred => "softmax_deferred",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(OutputKind::Identity),
            "softmax_deferred" => Ok(OutputKind::SoftmaxDeferred),
            other => Err(Error::invalid(format!("unknown output kind '{other}'"))),
        }
    }
}

/// Widths plus activations; fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub layer_widths: Vec<usize>,
    pub hidden: Activation,
    pub output: OutputKind,
}

impl MlpArchitecture {
    pub fn new(layer_widths: Vec<usize>, hidden: Activation, output: OutputKind) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::invalid(format!(
                "architecture needs at least input and output widths, got {:?}",
                layer_widths
            )));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!(
                "architecture widths must be positive, got {:?}",
                layer_widths
            )));
        }
        Ok(Self {
            layer_widths,
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    /// Number of weight layers.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Total parameters: sum over layers of `in·out + out`.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Fan-in of weight layer `l`.
    pub fn fan_in(&self, layer: usize) -> usize {
        self.layer_widths[layer]
    }

    /// `(weight_offset, bias_offset, in, out)` for weight layer `l` in the
    /// flat parameter vector.
    fn layer_span(&self, layer: usize) -> (usize, usize, usize, usize) {
        debug_assert!(layer < self.n_layers());
        let mut off = 0;
        for l in 0..layer {
            let (i, o) = (self.layer_widths[l], self.layer_widths[l + 1]);
            off += i * o + o;
        }
        let (i, o) = (self.layer_widths[layer], self.layer_widths[layer + 1]);
        (off, off + i * o, i, o)
    }
}

/// Flat parameter storage tied to its architecture.
///
/// The flat order is, per layer: weights row-major `(out, in)`, then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    arch: MlpArchitecture,
    values: Array1<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(arch: MlpArchitecture) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            values: Array1::zeros(n),
        }
    }

    pub fn from_values(arch: MlpArchitecture, values: Array1<T>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::shape(
                "ParamVector::from_values",
                format!("{} parameters", arch.param_count()),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<T> {
        &mut self.values
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, T> {
        let (w_off, b_off, i, o) = self.arch.layer_span(layer);
        let slice = &self.values.as_slice().expect("contiguous")[w_off..b_off];
        ArrayView2::from_shape((o, i), slice).expect("layout invariant")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, T> {
        let (_, b_off, _, o) = self.arch.layer_span(layer);
        let slice = &self.values.as_slice().expect("contiguous")[b_off..b_off + o];
        ArrayView1::from_shape(o, slice).expect("layout invariant")
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, T> {
        let (w_off, b_off, i, o) = self.arch.layer_span(layer);
        let slice = &mut self.values.as_slice_mut().expect("contiguous")[w_off..b_off];
        ArrayViewMut2::from_shape((o, i), slice).expect("layout invariant")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, T> {
        let (_, b_off, _, o) = self.arch.layer_span(layer);
        let slice = &mut self.values.as_slice_mut().expect("contiguous")[b_off..b_off + o];
        ArrayViewMut1::from_shape(o, slice).expect("layout invariant")
    }

    /// Structured copy of every layer as `(weights, bias)`.
    pub fn to_layers(&self) -> Vec<(Array2<T>, Array1<T>)> {
        (0..self.arch.n_layers())
            .map(|l| (self.weight(l).to_owned(), self.bias(l).to_owned()))
            .collect()
    }

    /// Rebuilds the flat vector from structured layers; exact inverse of
    /// [`ParamVector::to_layers`].
    pub fn from_layers(arch: MlpArchitecture, layers: &[(Array2<T>, Array1<T>)]) -> Result<Self> {
        if layers.len() != arch.n_layers() {
            return Err(Error::shape(
                "ParamVector::from_layers",
                format!("{} layers", arch.n_layers()),
                format!("{} layers", layers.len()),
            ));
        }
        let mut out = Self::zeros(arch);
        for (l, (w, b)) in layers.iter().enumerate() {
            let (_, _, i, o) = out.arch.layer_span(l);
            if w.dim() != (o, i) || b.len() != o {
                return Err(Error::shape(
                    format!("ParamVector::from_layers layer {l}"),
                    format!("weights {o}x{i}, bias {o}"),
                    format!("weights {}x{}, bias {}", w.nrows(), w.ncols(), b.len()),
                ));
            }
            out.weight_mut(l).assign(w);
            out.bias_mut(l).assign(b);
        }
        Ok(out)
    }
}
