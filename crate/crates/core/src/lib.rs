//! Posterior approximation for neural networks.
//!
//! The crate provides four ways to approximate a Bayesian posterior over
//! network functions, plus the shared machinery they need:
//!
//! - [`linear`]: exact conjugate posteriors for linear-Gaussian models and the
//!   anchored-MAP construction whose sample distribution provably matches
//!   them. This is the executable reference the other methods are verified
//!   against.
//! - [`ensemble`]: anchored MAP ensembles, regularized in parameter space or
//!   in output space toward frozen prior networks.
//! - [`gpn`]: generative posterior networks, a single generator conditioned on
//!   a latent code that maps standard normal draws to posterior function
//!   samples.
//! - [`mcmc`]: a Metropolis-Hastings oracle over network weights for
//!   small-scale ground truth.
//!
//! Supporting modules: [`nn`] (dense MLP forward/backward/optimizers),
//! [`prior`] (Gaussian parameter priors), [`metrics`] (interval coverage,
//! variance scores, detection AUC, entropy), [`data`] (synthetic tasks, CSV
//! ingestion, target-threshold splits, unlabeled pools).
//!
//! All numeric code is generic over [`Scalar`] (f32 or f64); the aliases below
//! fix the f64 instantiations used by the CLI and the verification suites.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod gpn;
pub mod linalg;
pub mod linear;
pub mod mcmc;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 parameter vector, the working precision for every shipped experiment.
pub type ParamVector64 = nn::ParamVector<f64>;
/// f64 multivariate Gaussian.
pub type Gaussian64 = linear::Gaussian<f64>;
/// f64 linear-Gaussian observation model.
pub type LinearModel64 = linear::LinearGaussianModel<f64>;
/// f64 anchored ensemble.
pub type Ensemble64 = ensemble::EnsembleModel<f64>;
/// f64 generative posterior network.
pub type Gpn64 = gpn::GpnModel<f64>;
/// f64 posterior sample set.
pub type SampleSet64 = metrics::PosteriorSampleSet<f64>;
/// f64 labeled dataset.
pub type Dataset64 = data::LabeledDataset<f64>;
