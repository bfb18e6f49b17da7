//! Exact Bayesian linear-Gaussian reference and the anchored-MAP construction.
//!
//! For a linear model `y = F θ + ε`, `ε ~ N(0, σ²I)`, with Gaussian prior
//! `θ ~ N(μ_p, Σ_p)`, the posterior is available in closed form. This module
//! computes it (always through the likelihood precision `FᵀF/σ²`, which stays
//! well-defined when there are fewer observations than parameters), and builds
//! the anchored-MAP sampler around it:
//!
//! - draw an anchor from the anchor distribution,
//! - solve the MAP problem for the likelihood times a prior-shaped Gaussian
//!   recentred at the anchor.
//!
//! With the exact anchor covariance `Σ_p + Σ_p (FᵀF/σ²) Σ_p` the distribution
//! of MAP solutions equals the posterior; the same construction is available
//! in output space, where the "parameters" are function values at a set of
//! sample inputs. [`anchored_moment_check`] is the Monte-Carlo harness used by
//! the verification suites to confirm (or refute) moment agreement.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, frobenius, sym_eigenvalues, symmetrize, CholeskyFactor};
use crate::scalar::Scalar;

/// Multivariate Gaussian with a validated covariance: symmetric to 1e-10 and
/// eigenvalues no lower than round-off (-1e-8, scaled for large matrices).
#[derive(Debug, Clone)]
pub struct Gaussian<T> {
    mean: Array1<T>,
    cov: Array2<T>,
}

impl<T: Scalar> Gaussian<T> {
    pub fn new(mean: Array1<T>, cov: Array2<T>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::shape(
                "Gaussian::new",
                format!("{n}-vector with {n}x{n} covariance", n = mean.len()),
                format!("cov {}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("Gaussian::new non-finite moment", None));
        }
        let asym = asymmetry(&cov).to_f64c();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "covariance asymmetric by {asym:.3e} (limit 1e-10)"
            )));
        }
        let eigs = sym_eigenvalues(&cov)?;
        if let Some(min) = eigs.first() {
            let scale = frobenius(&cov).to_f64c().max(1.0);
            let limit = -1e-8 * scale.max(1.0).min(1e4) - 1e-12 * scale;
            if min.to_f64c() < limit {
                return Err(Error::invalid(format!(
                    "covariance has eigenvalue {:.3e} below the PSD tolerance",
                    min.to_f64c()
                )));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<T> {
        &self.cov
    }

    pub fn marginal_variances(&self) -> Array1<T> {
        Array1::from_iter((0..self.dim()).map(|i| self.cov[(i, i)]))
    }

    /// Prepares a reusable sampler (factors the covariance once).
    pub fn sampler(&self) -> Result<GaussianSampler<T>> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: CholeskyFactor::new(&self.cov)?,
        })
    }
}

/// Draws `mean + L z` with `L Lᵀ` the factored covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler<T> {
    mean: Array1<T>,
    factor: CholeskyFactor<T>,
}

impl<T: Scalar> GaussianSampler<T> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        let z = Array1::from_iter((0..self.mean.len()).map(|_| T::standard_normal(rng)));
        self.factor.correlate(&z) + &self.mean
    }
}

/// Observations `y = F θ + ε` with known noise scale and Gaussian prior.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel<T> {
    design: Array2<T>,
    y_obs: Array1<T>,
    noise_std: T,
    prior: Gaussian<T>,
}

impl<T: Scalar> LinearGaussianModel<T> {
    pub fn new(design: Array2<T>, y_obs: Array1<T>, noise_std: T, prior: Gaussian<T>) -> Result<Self> {
        if design.nrows() != y_obs.len() {
            return Err(Error::shape(
                "LinearGaussianModel::new",
                format!("{} observations", design.nrows()),
                format!("{} targets", y_obs.len()),
            ));
        }
        if design.ncols() != prior.dim() {
            return Err(Error::shape(
                "LinearGaussianModel::new",
                format!("{}-dimensional prior", design.ncols()),
                format!("{}-dimensional prior", prior.dim()),
            ));
        }
        if !(noise_std > T::zero()) || !noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be positive and finite"));
        }
        Ok(Self {
            design,
            y_obs,
            noise_std,
            prior,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.design.ncols()
    }

    pub fn prior(&self) -> &Gaussian<T> {
        &self.prior
    }

    pub fn design(&self) -> &Array2<T> {
        &self.design
    }

    pub fn y_obs(&self) -> &Array1<T> {
        &self.y_obs
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    /// Likelihood precision `FᵀF/σ²`; rank-deficient is fine.
    fn likelihood_precision(&self) -> Array2<T> {
        let scale = T::one() / (self.noise_std * self.noise_std);
        self.design.t().dot(&self.design) * scale
    }

    /// Likelihood information vector `Fᵀy/σ²`.
    fn likelihood_shift(&self) -> Array1<T> {
        let scale = T::one() / (self.noise_std * self.noise_std);
        self.design.t().dot(&self.y_obs) * scale
    }
}

/// Exact conjugate posterior. With no observations this is the prior,
/// returned without any numerical round trip.
pub fn analytic_posterior<T: Scalar>(model: &LinearGaussianModel<T>) -> Result<Gaussian<T>> {
    if model.n_obs() == 0 {
        return Ok(model.prior.clone());
    }
    let prior_factor = CholeskyFactor::new(model.prior.cov())?;
    let prior_precision = prior_factor.inverse()?;
    let posterior_precision = symmetrize(&(model.likelihood_precision() + &prior_precision));
    let posterior_cov = CholeskyFactor::new(&posterior_precision)?.inverse()?;
    let info = model.likelihood_shift() + prior_precision.dot(model.prior.mean());
    let mean = posterior_cov.dot(&info);
    Gaussian::new(mean, posterior_cov)
}

/// MAP solution of likelihood × N(θ_anc, Σ_prior): the ridge system
/// `(FᵀF/σ² + Σ_p⁻¹) θ = Fᵀy/σ² + Σ_p⁻¹ θ_anc`. With no observations the
/// anchor itself is the MAP.
pub fn rms_map_linear<T: Scalar>(
    model: &LinearGaussianModel<T>,
    theta_anc: &Array1<T>,
) -> Result<Array1<T>> {
    if theta_anc.len() != model.n_params() {
        return Err(Error::shape(
            "rms_map_linear",
            format!("anchor of length {}", model.n_params()),
            format!("length {}", theta_anc.len()),
        ));
    }
    if model.n_obs() == 0 {
        return Ok(theta_anc.clone());
    }
    let prior_precision = CholeskyFactor::new(model.prior.cov())?.inverse()?;
    let system = symmetrize(&(model.likelihood_precision() + &prior_precision));
    let rhs = model.likelihood_shift() + prior_precision.dot(theta_anc);
    CholeskyFactor::new(&system)?.solve_vec(&rhs)
}

/// Anchor distribution that makes the MAP-solution law equal the posterior:
/// mean `μ_p`, covariance `Σ_p + Σ_p (FᵀF/σ²) Σ_p`.
pub fn exact_anchor_dist<T: Scalar>(model: &LinearGaussianModel<T>) -> Result<Gaussian<T>> {
    let sigma_p = model.prior.cov();
    let inflation = sigma_p.dot(&model.likelihood_precision()).dot(sigma_p);
    let cov = symmetrize(&(sigma_p + &inflation));
    Gaussian::new(model.prior.mean().clone(), cov)
}

/// Prior and posterior pushed forward to function values `Ŷ = F_s θ` at a set
/// of sample inputs with feature rows `F_s`.
#[derive(Debug, Clone)]
pub struct OutputSpace<T> {
    pub prior: Gaussian<T>,
    pub posterior: Gaussian<T>,
}

/// Output-space prior `(F_s μ_p, F_s Σ_p F_sᵀ)` and posterior
/// `(F_s μ_post, F_s Σ_post F_sᵀ)`.
pub fn output_space_posterior<T: Scalar>(
    model: &LinearGaussianModel<T>,
    sample_features: &Array2<T>,
) -> Result<OutputSpace<T>> {
    if sample_features.ncols() != model.n_params() {
        return Err(Error::shape(
            "output_space_posterior",
            format!("features with {} columns", model.n_params()),
            format!("{} columns", sample_features.ncols()),
        ));
    }
    let f = sample_features;
    let prior_mean = f.dot(model.prior.mean());
    let prior_cov = symmetrize(&f.dot(model.prior.cov()).dot(&f.t()));
    let post = analytic_posterior(model)?;
    let post_mean = f.dot(post.mean());
    let post_cov = symmetrize(&f.dot(post.cov()).dot(&f.t()));
    Ok(OutputSpace {
        prior: Gaussian::new(prior_mean, prior_cov)?,
        posterior: Gaussian::new(post_mean, post_cov)?,
    })
}

/// Exact output-space anchor distribution `N(μ_Ŷ, Σ_Ŷ Σ_post⁻¹ Σ_Ŷ)`, the
/// function-value analogue of [`exact_anchor_dist`] (the two forms agree:
/// `Σ Σ_post⁻¹ Σ = Σ + Σ Λ_like Σ`). Needs the prior pushforward to be
/// invertible, i.e. no more sample inputs than parameters and full-rank
/// features.
pub fn exact_output_anchor_dist<T: Scalar>(
    model: &LinearGaussianModel<T>,
    sample_features: &Array2<T>,
) -> Result<Gaussian<T>> {
    let spaces = output_space_posterior(model, sample_features)?;
    let post_factor = CholeskyFactor::new(spaces.posterior.cov())?;
    let half = post_factor.solve_mat(spaces.prior.cov())?;
    let cov = symmetrize(&spaces.prior.cov().dot(&half));
    Gaussian::new(spaces.prior.mean().clone(), cov)
}

/// Output-space MAP: argmax of the output-space likelihood times a
/// prior-covariance Gaussian recentred at `y_anc`.
pub fn output_space_map<T: Scalar>(
    model: &LinearGaussianModel<T>,
    sample_features: &Array2<T>,
    y_anc: &Array1<T>,
) -> Result<Array1<T>> {
    let spaces = output_space_posterior(model, sample_features)?;
    if y_anc.len() != spaces.prior.dim() {
        return Err(Error::shape(
            "output_space_map",
            format!("anchor of length {}", spaces.prior.dim()),
            format!("length {}", y_anc.len()),
        ));
    }
    let prior_factor = CholeskyFactor::new(spaces.prior.cov())?;
    let post_factor = CholeskyFactor::new(spaces.posterior.cov())?;
    // η_like = Σ_post⁻¹ μ_post − Σ_Ŷ⁻¹ μ_Ŷ, the linear term of the
    // output-space log-likelihood; Bayes in output space fixes it uniquely.
    let eta_like =
        post_factor.solve_vec(spaces.posterior.mean())? - prior_factor.solve_vec(spaces.prior.mean())?;
    let rhs = eta_like + prior_factor.solve_vec(y_anc)?;
    Ok(spaces.posterior.cov().dot(&rhs))
}

/// Monte-Carlo comparison between mapped anchor samples and a reference
/// Gaussian, in the units the acceptance gates use: standard errors for the
/// mean, relative Frobenius distance for the covariance, and per-coordinate
/// variance gaps in variance-estimator standard errors.
#[derive(Debug, Clone)]
pub struct MomentCheck {
    pub n_samples: usize,
    /// |empirical mean − reference mean| / SE, per coordinate.
    pub mean_z: Vec<f64>,
    /// ‖Σ̂ − Σ‖_F / ‖Σ‖_F.
    pub cov_rel_frobenius: f64,
    pub reference_var: Vec<f64>,
    pub empirical_var: Vec<f64>,
    /// SE of each empirical variance under the reference, `σ²·sqrt(2/(n−1))`.
    pub var_se: Vec<f64>,
}

impl MomentCheck {
    pub fn max_mean_z(&self) -> f64 {
        self.mean_z.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest amount (in SEs) by which an empirical marginal variance falls
    /// short of the reference variance. Positive = under-estimation.
    pub fn max_var_shortfall_z(&self) -> f64 {
        self.reference_var
            .iter()
            .zip(&self.empirical_var)
            .zip(&self.var_se)
            .map(|((&r, &e), &se)| (r - e) / se)
            .fold(f64::MIN, f64::max)
    }

    pub fn mean_within(&self, z_limit: f64) -> bool {
        self.max_mean_z() <= z_limit
    }

    pub fn cov_within(&self, rel_limit: f64) -> bool {
        self.cov_rel_frobenius <= rel_limit
    }
}

/// Draws `n_samples` anchors, maps each through `map`, and compares the
/// empirical moments of the mapped samples with `reference`.
pub fn anchored_moment_check<T: Scalar>(
    reference: &Gaussian<T>,
    anchor: &Gaussian<T>,
    n_samples: usize,
    seed: u64,
    mut map: impl FnMut(&Array1<T>) -> Result<Array1<T>>,
) -> Result<MomentCheck> {
    if n_samples < 2 {
        return Err(Error::invalid("moment check needs at least two samples"));
    }
    let dim = reference.dim();
    let sampler = anchor.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = Array1::<f64>::zeros(dim);
    let mut outer = Array2::<f64>::zeros((dim, dim));
    for _ in 0..n_samples {
        let mapped = map(&sampler.draw(&mut rng))?;
        if mapped.len() != dim {
            return Err(Error::shape(
                "anchored_moment_check",
                format!("mapped sample of length {dim}"),
                format!("length {}", mapped.len()),
            ));
        }
        let v = mapped.mapv(|x| x.to_f64c());
        for i in 0..dim {
            sum[i] += v[i];
            for j in 0..dim {
                outer[(i, j)] += v[i] * v[j];
            }
        }
    }
    let n = n_samples as f64;
    let mean = &sum / n;
    let mut cov = Array2::<f64>::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            cov[(i, j)] = (outer[(i, j)] - n * mean[i] * mean[j]) / (n - 1.0);
        }
    }
    let ref_mean: Vec<f64> = reference.mean().iter().map(|v| v.to_f64c()).collect();
    let ref_cov = reference.cov().mapv(|v| v.to_f64c());
    let mean_z = (0..dim)
        .map(|i| {
            let se = (ref_cov[(i, i)] / n).sqrt().max(f64::MIN_POSITIVE);
            (mean[i] - ref_mean[i]).abs() / se
        })
        .collect();
    let diff = &cov - &ref_cov;
    let denom = frobenius(&ref_cov).max(f64::MIN_POSITIVE);
    let cov_rel_frobenius = frobenius(&diff) / denom;
    let var_se = (0..dim)
        .map(|i| (ref_cov[(i, i)] * (2.0 / (n - 1.0)).sqrt()).max(f64::MIN_POSITIVE))
        .collect();
    Ok(MomentCheck {
        n_samples,
        mean_z,
        cov_rel_frobenius,
        reference_var: (0..dim).map(|i| ref_cov[(i, i)]).collect(),
        empirical_var: (0..dim).map(|i| cov[(i, i)]).collect(),
        var_se,
    })
}

/// Parameter-space moment check: anchors through [`rms_map_linear`] against
/// the analytic posterior.
pub fn parameter_space_check<T: Scalar>(
    model: &LinearGaussianModel<T>,
    anchor: &Gaussian<T>,
    n_samples: usize,
    seed: u64,
) -> Result<MomentCheck> {
    let reference = analytic_posterior(model)?;
    anchored_moment_check(&reference, anchor, n_samples, seed, |theta| {
        rms_map_linear(model, theta)
    })
}

/// Output-space moment check: anchors through [`output_space_map`] against the
/// pushforward posterior.
pub fn output_space_check<T: Scalar>(
    model: &LinearGaussianModel<T>,
    sample_features: &Array2<T>,
    anchor: &Gaussian<T>,
    n_samples: usize,
    seed: u64,
) -> Result<MomentCheck> {
    let reference = output_space_posterior(model, sample_features)?.posterior;
    anchored_moment_check(&reference, anchor, n_samples, seed, |y_anc| {
        output_space_map(model, sample_features, y_anc)
    })
}
