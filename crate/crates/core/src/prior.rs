//! Gaussian parameter priors over MLP weights.
//!
//! A [`PriorSpec`] assigns every parameter an independent zero-mean Gaussian
//! with a per-layer variance. Weight variances are either used raw (bootstrap
//! prior networks, whose reference values are calibrated without scaling) or
//! divided by the layer fan-in (trained networks, so the induced function
//! prior stays comparable across widths). Bias variances are never scaled.
//! Sampling from the prior doubles as network initialization: an untrained
//! network is by construction a prior draw.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{MlpArchitecture, ParamVector};
use crate::scalar::Scalar;

/// How per-layer weight variances relate to the sampling variance of each
/// weight entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScaling {
    /// Entry variance = layer variance (bootstrap prior networks).
    Raw,
    /// Entry variance = layer variance / fan_in (trained networks).
    FanIn,
}

impl WeightScaling {
    pub fn name(self) -> &'static str {
        match self {
            WeightScaling::Raw => "raw",
            WeightScaling::FanIn => "fan_in",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "raw" => Ok(WeightScaling::Raw),
            "fan_in" => Ok(WeightScaling::FanIn),
            other => Err(Error::invalid(format!("unknown weight scaling '{other}'"))),
        }
    }
}

/// Per-layer Gaussian prior variances for an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// One variance per weight layer, applied per [`WeightScaling`].
    pub weight_variances: Vec<f64>,
    /// One variance per weight layer for that layer's biases. Variance 0 pins
    /// the bias at zero.
    pub bias_variances: Vec<f64>,
    pub scaling: WeightScaling,
}

impl PriorSpec {
    pub fn new(
        weight_variances: Vec<f64>,
        bias_variances: Vec<f64>,
        scaling: WeightScaling,
    ) -> Result<Self> {
        if weight_variances.len() != bias_variances.len() {
            return Err(Error::invalid(format!(
                "prior needs matching variance lists, got {} weight and {} bias entries",
                weight_variances.len(),
                bias_variances.len()
            )));
        }
        if weight_variances.is_empty() {
            return Err(Error::invalid("prior needs at least one layer"));
        }
        let bad = |v: &f64| !v.is_finite() || *v < 0.0;
        if weight_variances.iter().any(bad) || bias_variances.iter().any(bad) {
            return Err(Error::invalid("prior variances must be finite and non-negative"));
        }
        Ok(Self {
            weight_variances,
            bias_variances,
            scaling,
        })
    }

    /// Same variance for weights and biases in every layer.
    pub fn uniform(n_layers: usize, variance: f64, scaling: WeightScaling) -> Result<Self> {
        Self::new(vec![variance; n_layers], vec![variance; n_layers], scaling)
    }

    /// Fan-in-scaled unit weight variance with near-zero biases; the default
    /// initialization for trained networks when no prior is specified.
    pub fn default_init(n_layers: usize) -> Self {
        Self::new(vec![1.0; n_layers], vec![0.01; n_layers], WeightScaling::FanIn)
            .expect("constants are valid")
    }

    pub fn n_layers(&self) -> usize {
        self.weight_variances.len()
    }

    /// Errors unless the prior has one variance pair per weight layer.
    pub fn check_arch(&self, arch: &MlpArchitecture) -> Result<()> {
        if self.n_layers() != arch.n_layers() {
            return Err(Error::shape(
                "prior/architecture pairing",
                format!("{} layers", arch.n_layers()),
                format!("{} prior layers", self.n_layers()),
            ));
        }
        Ok(())
    }

    /// Sampling variance of each weight entry in layer `l`.
    pub fn weight_entry_variance(&self, arch: &MlpArchitecture, layer: usize) -> f64 {
        let v = self.weight_variances[layer];
        match self.scaling {
            WeightScaling::Raw => v,
            WeightScaling::FanIn => v / arch.fan_in(layer) as f64,
        }
    }

    /// Per-parameter variances in flat [`ParamVector`] order; the diagonal of
    /// the parameter-space prior covariance.
    pub fn param_variances<T: Scalar>(&self, arch: &MlpArchitecture) -> Result<Array1<T>> {
        self.check_arch(arch)?;
        let mut out = Vec::with_capacity(arch.param_count());
        for l in 0..arch.n_layers() {
            let wv = self.weight_entry_variance(arch, l);
            let n_w = arch.layer_widths[l] * arch.layer_widths[l + 1];
            out.extend(std::iter::repeat(T::cast(wv)).take(n_w));
            out.extend(std::iter::repeat(T::cast(self.bias_variances[l])).take(arch.layer_widths[l + 1]));
        }
        Ok(Array1::from_vec(out))
    }
}

/// Draws one parameter vector from the prior using the supplied RNG.
pub fn sample_prior_params_with<T: Scalar, R: Rng + ?Sized>(
    prior: &PriorSpec,
    arch: &MlpArchitecture,
    rng: &mut R,
) -> Result<ParamVector<T>> {
    let variances = prior.param_variances::<T>(arch)?;
    let values = variances.mapv(|v| v.sqrt() * T::standard_normal(rng));
    ParamVector::from_values(arch.clone(), values)
}

/// Seeded prior draw; the same seed always yields the same parameters.
pub fn sample_prior_params<T: Scalar>(
    prior: &PriorSpec,
    arch: &MlpArchitecture,
    seed: u64,
) -> Result<ParamVector<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior_params_with(prior, arch, &mut rng)
}
