//! Random-walk Metropolis-Hastings over network parameters.
//!
//! Small networks admit a brute-force ground truth: sample the exact
//! posterior over parameters with MH, then push samples through the network
//! to get predictive function draws. Chains use isotropic Gaussian proposals
//! whose scale is adapted toward a 0.3 acceptance rate during burn-in only,
//! so the post-burn-in kernel is fixed and the chain is a genuine MH chain.
//! Convergence is judged with split-R-hat on predictive values at grid
//! points rather than on raw parameters, which are non-identifiable under
//! hidden-unit permutations.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{PosteriorSampleSet, SampleKind};
use crate::nn::forward;
use crate::nn::ParamVector;
use crate::prior::PriorSpec;
use crate::scalar::Scalar;

/// Chain settings. `n_samples` counts retained draws per chain after burn-in
/// and thinning.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub proposal_std: f64,
    pub n_chains: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Adapt the proposal scale toward 0.3 acceptance during burn-in.
    pub adapt_proposal: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            proposal_std: 0.05,
            n_chains: 4,
            burn_in: 20_000,
            thin: 10,
            n_samples: 1000,
            seed: 0,
            adapt_proposal: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_std >= 0.0) || !self.proposal_std.is_finite() {
            return Err(Error::invalid("proposal_std must be finite and >= 0"));
        }
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains must be >= 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be >= 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        Ok(())
    }
}

/// One chain's retained draws with their log-densities.
#[derive(Debug, Clone)]
pub struct McmcChain<T> {
    pub samples: Vec<ParamVector<T>>,
    pub log_posts: Vec<f64>,
    /// Acceptance rate over the post-burn-in phase.
    pub acceptance_rate: f64,
    /// Proposal scale in force after burn-in adaptation.
    pub final_proposal_std: f64,
}

/// Unnormalized log posterior of network parameters under a Gaussian
/// data likelihood and an optional zero-mean diagonal Gaussian prior:
/// `-sum ||y_i - f(x_i)||^2 / (2 sigma^2) - sum theta_d^2 / (2 v_d)`.
pub fn log_unnorm_posterior<T: Scalar>(
    params: &ParamVector<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    noise_std: f64,
    prior: Option<&PriorSpec>,
) -> Result<f64> {
    if !(noise_std > 0.0) {
        return Err(Error::invalid("noise_std must be positive"));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::shape(
            "log_unnorm_posterior",
            format!("{} target rows", x.nrows()),
            format!("{} target rows", y.nrows()),
        ));
    }
    let mut log_p = 0.0;
    if x.nrows() > 0 {
        let pred = forward(params, x)?;
        if pred.dim() != y.dim() {
            return Err(Error::shape(
                "log_unnorm_posterior",
                format!("predictions {}x{}", y.nrows(), y.ncols()),
                format!("{}x{}", pred.nrows(), pred.ncols()),
            ));
        }
        let sq: f64 = pred
            .iter()
            .zip(y.iter())
            .map(|(p, t)| {
                let d = (*p - *t).to_f64c();
                d * d
            })
            .sum();
        log_p -= sq / (2.0 * noise_std * noise_std);
    }
    if let Some(prior) = prior {
        let variances = prior.param_variances::<f64>(params.arch())?;
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid(
                "log prior needs strictly positive variances",
            ));
        }
        let quad: f64 = params
            .values()
            .iter()
            .zip(variances.iter())
            .map(|(t, v)| {
                let td = t.to_f64c();
                td * td / (2.0 * v)
            })
            .sum();
        log_p -= quad;
    }
    Ok(log_p)
}

/// Runs one MH chain from `init` against an arbitrary log-density. The RNG
/// stream is `config.seed` with ChaCha stream id `chain_index`, so chains of
/// one configuration are decorrelated and each chain is reproducible alone.
pub fn run_mh<T: Scalar>(
    target: &dyn Fn(&ParamVector<T>) -> Result<f64>,
    init: &ParamVector<T>,
    config: &McmcConfig,
    chain_index: u64,
) -> Result<McmcChain<T>> {
    config.validate()?;
    if init.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("MH init parameters", None));
    }
    let mut current = init.clone();
    let mut current_lp = target(&current)?;
    if !current_lp.is_finite() {
        return Err(Error::invalid(format!(
            "log density at init is {current_lp}; MH needs a finite start"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_index);
    let mut proposal_std = config.proposal_std;
    let dim = current.values().len();

    let total_kept_steps = config.n_samples * config.thin;
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut log_posts = Vec::with_capacity(config.n_samples);
    let mut post_accepts = 0usize;
    let mut window_accepts = 0usize;
    const ADAPT_WINDOW: usize = 50;

    for step in 0..config.burn_in + total_kept_steps {
        let burn_phase = step < config.burn_in;
        if proposal_std > 0.0 {
            let mut proposal = current.clone();
            {
                let vals = proposal.values_mut();
                for i in 0..dim {
                    vals[i] += T::cast(proposal_std) * T::standard_normal(&mut rng);
                }
            }
            let proposal_lp = target(&proposal)?;
            // NaN from an overflowing network counts as -inf: auto-reject.
            let delta = proposal_lp - current_lp;
            let accept = delta >= 0.0 || {
                let u: f64 = rng.random::<f64>();
                u.ln() < delta
            };
            if accept && proposal_lp.is_finite() {
                current = proposal;
                current_lp = proposal_lp;
                window_accepts += 1;
                if !burn_phase {
                    post_accepts += 1;
                }
            }
            if burn_phase && config.adapt_proposal && (step + 1) % ADAPT_WINDOW == 0 {
                let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                proposal_std *= (rate - 0.3).exp();
                window_accepts = 0;
            }
        } else {
            // Degenerate proposal: the chain stays put and every "move"
            // (to the identical point) is accepted.
            if !burn_phase {
                post_accepts += 1;
            }
        }
        if !burn_phase {
            let kept_step = step - config.burn_in;
            if (kept_step + 1) % config.thin == 0 {
                samples.push(current.clone());
                log_posts.push(current_lp);
            }
        }
    }
    Ok(McmcChain {
        samples,
        log_posts,
        acceptance_rate: post_accepts as f64 / total_kept_steps as f64,
        final_proposal_std: proposal_std,
    })
}

/// Runs `config.n_chains` independent chains, one RNG stream each, all
/// started from the corresponding entry of `inits`.
pub fn run_chains<T: Scalar>(
    target: &dyn Fn(&ParamVector<T>) -> Result<f64>,
    inits: &[ParamVector<T>],
    config: &McmcConfig,
) -> Result<Vec<McmcChain<T>>> {
    config.validate()?;
    if inits.len() != config.n_chains {
        return Err(Error::shape(
            "run_chains",
            format!("{} inits", config.n_chains),
            format!("{}", inits.len()),
        ));
    }
    inits
        .iter()
        .enumerate()
        .map(|(i, init)| run_mh(target, init, config, i as u64))
        .collect()
}

/// Split-R-hat for one scalar quantity recorded by several chains of equal
/// length. Each chain is halved, giving 2m half-chains; the statistic
/// compares between- to within-half-chain variance and approaches 1 from
/// above as chains mix.
pub fn split_rhat(per_chain: &[Vec<f64>]) -> Result<f64> {
    if per_chain.is_empty() {
        return Err(Error::invalid("split_rhat needs at least one chain"));
    }
    let len = per_chain[0].len();
    if per_chain.iter().any(|c| c.len() != len) {
        return Err(Error::invalid("split_rhat chains must share a length"));
    }
    if len < 4 {
        return Err(Error::invalid("split_rhat needs at least 4 draws per chain"));
    }
    let half = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(per_chain.len() * 2);
    for chain in per_chain {
        halves.push(&chain[..half]);
        halves.push(&chain[half..2 * half]);
    }
    let m = halves.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / n)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0)
        * means
            .iter()
            .map(|mu| (mu - grand) * (mu - grand))
            .sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        // All half-chains constant: either everything agrees (perfect) or
        // the chains are stuck apart (hopeless).
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Largest split-R-hat over predictive function values at the grid rows.
/// Channels beyond the first contribute their own quantities.
pub fn predictive_split_rhat<T: Scalar>(
    chains: &[McmcChain<T>],
    x_grid: &Array2<T>,
) -> Result<f64> {
    if chains.is_empty() || chains[0].samples.is_empty() {
        return Err(Error::invalid("predictive_split_rhat needs nonempty chains"));
    }
    let per_chain_sets: Vec<PosteriorSampleSet<T>> = chains
        .iter()
        .map(|c| posterior_predictive(std::slice::from_ref(c), x_grid))
        .collect::<Result<_>>()?;
    let (_, n, c_out) = per_chain_sets[0].samples().dim();
    let mut worst = 0.0f64;
    for ni in 0..n {
        for ci in 0..c_out {
            let series: Vec<Vec<f64>> = per_chain_sets
                .iter()
                .map(|set| {
                    (0..set.n_draws())
                        .map(|s| set.samples()[(s, ni, ci)].to_f64c())
                        .collect()
                })
                .collect();
            let r = split_rhat(&series)?;
            if r > worst {
                worst = r;
            }
        }
    }
    Ok(worst)
}

/// Evaluates every retained draw of every chain on `x_grid`, giving an
/// (S_total x N x C) regression sample set directly comparable with other
/// posterior samplers.
pub fn posterior_predictive<T: Scalar>(
    chains: &[McmcChain<T>],
    x_grid: &Array2<T>,
) -> Result<PosteriorSampleSet<T>> {
    let total: usize = chains.iter().map(|c| c.samples.len()).sum();
    if total == 0 {
        return Err(Error::invalid("no retained draws to evaluate"));
    }
    let first = chains
        .iter()
        .flat_map(|c| c.samples.first())
        .next()
        .ok_or_else(|| Error::invalid("no retained draws to evaluate"))?;
    let c_out = *first.arch().layer_widths.last().expect("validated arch");
    let n = x_grid.nrows();
    let mut out = Array3::zeros((total, n, c_out));
    let mut s = 0;
    for chain in chains {
        for params in &chain.samples {
            let pred = forward(params, x_grid)?;
            for ni in 0..n {
                for ci in 0..c_out {
                    out[(s, ni, ci)] = pred[(ni, ci)];
                }
            }
            s += 1;
        }
    }
    PosteriorSampleSet::new(out, SampleKind::RegressionValues)
}

/// Convenience target closure for network posteriors.
pub fn network_posterior_target<'a, T: Scalar>(
    x: &'a Array2<T>,
    y: &'a Array2<T>,
    noise_std: f64,
    prior: &'a PriorSpec,
) -> impl Fn(&ParamVector<T>) -> Result<f64> + 'a {
    move |params| log_unnorm_posterior(params, x, y, noise_std, Some(prior))
}
