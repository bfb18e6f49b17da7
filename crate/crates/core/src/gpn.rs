//! Generator-based posterior sampling.
//!
//! A single network `g(x, z; phi)` maps an evaluation batch plus a
//! low-dimensional embedding vector to one function sample. Training pairs
//! each learned embedding row with a frozen reference network drawn from the
//! function prior, pulls `g` toward the data on labeled points and toward its
//! paired reference on unlabeled points, and keeps the embedding cloud close
//! to a standard normal so fresh `z ~ N(0, I)` draws act as posterior samples.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledDataset, UnlabeledPool};
use crate::error::{Error, Result};
use crate::metrics::{PosteriorSampleSet, SampleKind};
use crate::nn::{
    backward_trace, forward, optimizer_step, run_forward, MlpArchitecture, Optimizer,
    OptimizerState, ParamVector,
};
use crate::prior::{sample_prior_params_with, PriorSpec};
use crate::scalar::Scalar;

/// What the generator predicts and how the data term scores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Squared error on raw outputs.
    Regression,
    /// Cross-entropy on softmaxed outputs; the reference-matching term stays
    /// on the raw logits.
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}

/// How training visits embedding/reference pairs each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSchedule {
    /// One uniformly drawn pair per step: O(1) step cost, unbiased estimate
    /// of the averaged full objective.
    Uniform,
    /// Every pair each step, averaged over pairs so both schedules target
    /// the same loss scale.
    FullSum,
}

/// When the smoothing noise added to the selected embedding is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Fresh draw every optimization step (shared across pairs in a
    /// full-sum step).
    PerStep,
    /// One draw per pair, fixed for the whole run.
    PerPair,
}

/// Generator shape and loss weighting.
#[derive(Debug, Clone)]
pub struct GpnConfig {
    /// Number of embedding/reference pairs.
    pub k: usize,
    pub embed_dim: usize,
    /// Weight of the reference-matching term on unlabeled points.
    pub beta: f64,
    /// Scale of the smoothing noise added to the selected embedding.
    pub noise_scale: f64,
    /// Reference networks defining the function prior.
    pub bootstrap_arch: MlpArchitecture,
    pub bootstrap_prior: PriorSpec,
    /// Generator; input width must be data width + embed_dim.
    pub generator_arch: MlpArchitecture,
    /// Assumed observation noise level of the labeled data.
    pub sigma_eps: f64,
    /// Weight of the embedding-distribution regularizer.
    pub kl_weight: f64,
    pub task: Task,
    pub pair_schedule: PairSchedule,
    pub noise_mode: NoiseMode,
}

impl GpnConfig {
    /// Width of the data portion of the generator input.
    pub fn data_dim(&self) -> usize {
        self.bootstrap_arch.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.generator_arch.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::invalid("embed_dim must be at least 1"));
        }
        for (name, v) in [("beta", self.beta), ("noise_scale", self.noise_scale), ("kl_weight", self.kl_weight)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.sigma_eps > 0.0) || !self.sigma_eps.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_eps must be finite and > 0, got {}",
                self.sigma_eps
            )));
        }
        if self.k == 1 && self.kl_weight > 0.0 {
            return Err(Error::invalid(
                "kl_weight > 0 needs k >= 2: the embedding spread is undefined for a single pair",
            ));
        }
        let expect = self.bootstrap_arch.input_dim() + self.embed_dim;
        if self.generator_arch.input_dim() != expect {
            return Err(Error::shape(
                "generator input",
                format!("data dim {} + embed dim {} = {expect}", self.bootstrap_arch.input_dim(), self.embed_dim),
                format!("{}", self.generator_arch.input_dim()),
            ));
        }
        if self.generator_arch.output_dim() != self.bootstrap_arch.output_dim() {
            return Err(Error::shape(
                "generator/reference outputs",
                format!("{}", self.bootstrap_arch.output_dim()),
                format!("{}", self.generator_arch.output_dim()),
            ));
        }
        if self.task == Task::Classification && self.output_dim() < 2 {
            return Err(Error::invalid("classification needs at least 2 output classes"));
        }
        self.bootstrap_prior.check_arch(&self.bootstrap_arch)?;
        Ok(())
    }
}

/// Generator parameters, learned embeddings, and the frozen reference nets.
///
/// The pairing `(embeddings[j], bootstraps[j])` is fixed for the life of the
/// model; training never touches the reference parameters.
#[derive(Debug, Clone)]
pub struct GpnModel<T> {
    config: GpnConfig,
    phi: ParamVector<T>,
    embeddings: Vec<Array1<T>>,
    bootstraps: Vec<ParamVector<T>>,
}

impl<T: Scalar> GpnModel<T> {
    pub fn from_parts(
        config: GpnConfig,
        phi: ParamVector<T>,
        embeddings: Vec<Array1<T>>,
        bootstraps: Vec<ParamVector<T>>,
    ) -> Result<Self> {
        config.validate()?;
        if phi.arch() != &config.generator_arch {
            return Err(Error::invalid("generator parameters do not match the configured architecture"));
        }
        if embeddings.len() != config.k || bootstraps.len() != config.k {
            return Err(Error::shape(
                "GpnModel::from_parts",
                format!("{} embedding and reference rows", config.k),
                format!("{} embeddings, {} references", embeddings.len(), bootstraps.len()),
            ));
        }
        if embeddings.iter().any(|z| z.len() != config.embed_dim) {
            return Err(Error::invalid("every embedding must have length embed_dim"));
        }
        if bootstraps.iter().any(|b| b.arch() != &config.bootstrap_arch) {
            return Err(Error::invalid("reference parameters do not match the configured architecture"));
        }
        let finite = phi.values().iter().all(|v| v.is_finite())
            && embeddings.iter().all(|z| z.iter().all(|v| v.is_finite()))
            && bootstraps.iter().all(|b| b.values().iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::numeric("GpnModel::from_parts", None));
        }
        Ok(Self { config, phi, embeddings, bootstraps })
    }

    pub fn config(&self) -> &GpnConfig {
        &self.config
    }

    pub fn phi(&self) -> &ParamVector<T> {
        &self.phi
    }

    pub fn embeddings(&self) -> &[Array1<T>] {
        &self.embeddings
    }

    pub fn bootstraps(&self) -> &[ParamVector<T>] {
        &self.bootstraps
    }

    /// Per-dimension mean and sample standard deviation of the embedding
    /// cloud. Needs k >= 2.
    pub fn embedding_moments(&self) -> Result<(Array1<T>, Array1<T>)> {
        let (zbar, s2) = embedding_mean_var(&self.embeddings)?;
        Ok((zbar, s2.mapv(T::sqrt)))
    }
}

/// Draws the initial model: generator weights from the fan-in default
/// initializer, embeddings from N(0, I), then the reference networks from
/// the configured prior, all from one stream in that order.
pub fn init_gpn<T: Scalar>(config: &GpnConfig, seed: u64) -> Result<GpnModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_prior = PriorSpec::default_init(config.generator_arch.n_layers());
    let phi = sample_prior_params_with(&init_prior, &config.generator_arch, &mut rng)?;
    let embeddings = (0..config.k)
        .map(|_| Array1::from_shape_fn(config.embed_dim, |_| T::standard_normal(&mut rng)))
        .collect();
    let bootstraps = (0..config.k)
        .map(|_| sample_prior_params_with(&config.bootstrap_prior, &config.bootstrap_arch, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(GpnModel { config: config.clone(), phi, embeddings, bootstraps })
}

/// Appends `z` to every row of `x`.
fn join_embedding<T: Scalar>(x: &Array2<T>, z: &Array1<T>) -> Array2<T> {
    let (n, d) = x.dim();
    let e = z.len();
    let mut out = Array2::zeros((n, d + e));
    out.slice_mut(s![.., ..d]).assign(x);
    for i in 0..n {
        for q in 0..e {
            out[(i, d + q)] = z[q];
        }
    }
    out
}

/// Runs the generator on an evaluation batch with one embedding vector.
/// For classification the result is pre-softmax logits.
pub fn gpn_forward<T: Scalar>(model: &GpnModel<T>, x: &Array2<T>, z: &Array1<T>) -> Result<Array2<T>> {
    check_eval_input(model, x, z)?;
    forward(&model.phi, &join_embedding(x, z))
}

fn check_eval_input<T: Scalar>(model: &GpnModel<T>, x: &Array2<T>, z: &Array1<T>) -> Result<()> {
    if x.ncols() != model.config.data_dim() || z.len() != model.config.embed_dim {
        return Err(Error::shape(
            "gpn_forward",
            format!("{} data columns + {} embedding entries", model.config.data_dim(), model.config.embed_dim),
            format!("{} columns, {} entries", x.ncols(), z.len()),
        ));
    }
    Ok(())
}

/// Loss pieces before weighting: `total` is
/// `data + beta * anchor_gap + kl_weight * kl`.
#[derive(Debug, Clone, Copy)]
pub struct GpnLossTerms<T> {
    pub total: T,
    /// Mean data loss over the labeled batch (0 when the batch is empty).
    pub data: T,
    /// Mean squared generator/reference mismatch over the unlabeled batch.
    pub anchor_gap: T,
    /// Divergence of the embedding cloud from a standard normal.
    pub kl: T,
}

/// One-pair loss with gradients for the generator and the selected
/// embedding row.
#[derive(Debug, Clone)]
pub struct GpnLossGrad<T> {
    pub terms: GpnLossTerms<T>,
    pub phi_grad: ParamVector<T>,
    pub z_grad: Array1<T>,
}

/// Data and reference terms for one pair evaluated at `z_eff`, with
/// gradients already weighted by `beta` for the reference part.
struct PairTerms<T> {
    data: T,
    anchor_gap: T,
    phi_grad: ParamVector<T>,
    z_grad: Array1<T>,
}

fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let (n, c) = logits.dim();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        let row = logits.row(i);
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut total = T::zero();
        for ci in 0..c {
            let e = (row[ci] - max).exp();
            out[(i, ci)] = e;
            total += e;
        }
        for ci in 0..c {
            out[(i, ci)] = out[(i, ci)] / total;
        }
    }
    out
}

/// Mean data loss over the batch and its gradient w.r.t. the raw outputs.
/// Regression: mean squared L2 error. Classification: mean cross-entropy of
/// softmaxed logits against target rows (one-hot or soft labels).
fn data_term<T: Scalar>(task: Task, out: &Array2<T>, y: &Array2<T>) -> (T, Array2<T>) {
    let (n, c) = out.dim();
    let inv_n = T::cast(1.0 / n as f64);
    let mut loss = T::zero();
    let mut grad = Array2::zeros((n, c));
    match task {
        Task::Regression => {
            for i in 0..n {
                for ci in 0..c {
                    let d = out[(i, ci)] - y[(i, ci)];
                    loss += d * d * inv_n;
                    grad[(i, ci)] = T::cast(2.0) * d * inv_n;
                }
            }
        }
        Task::Classification => {
            let probs = softmax_rows(out);
            for i in 0..n {
                // log p = logit - logsumexp, evaluated through the softmax
                // row to keep one stabilized code path.
                for ci in 0..c {
                    let yic = y[(i, ci)];
                    if yic != T::zero() {
                        loss -= yic * probs[(i, ci)].ln() * inv_n;
                    }
                    grad[(i, ci)] = (probs[(i, ci)] - yic) * inv_n;
                }
            }
        }
    }
    (loss, grad)
}

fn pair_terms<T: Scalar>(
    config: &GpnConfig,
    phi: &ParamVector<T>,
    bootstrap: &ParamVector<T>,
    x_obs: &Array2<T>,
    y_obs: &Array2<T>,
    x_sample: &Array2<T>,
    z_eff: &Array1<T>,
) -> Result<PairTerms<T>> {
    let data_dim = config.data_dim();
    let embed_dim = config.embed_dim;
    let beta = T::cast(config.beta);
    let mut phi_grad = ParamVector::zeros(config.generator_arch.clone());
    let mut z_grad = Array1::zeros(embed_dim);
    let mut data = T::zero();
    let mut anchor_gap = T::zero();

    if x_obs.nrows() > 0 {
        let trace = run_forward(phi, &join_embedding(x_obs, z_eff))?;
        let (loss, out_grad) = data_term(config.task, trace.output(), y_obs);
        data = loss;
        let (pg, input_grad) = backward_trace(phi, &trace, &out_grad, true)?;
        accumulate(&mut phi_grad, &pg, T::one());
        add_z_columns(&mut z_grad, input_grad.as_ref().expect("input grad requested"), data_dim, T::one());
    }

    if x_sample.nrows() == 0 {
        if config.beta > 0.0 {
            return Err(Error::invalid(
                "reference-matching term needs a nonempty unlabeled batch when beta > 0",
            ));
        }
        return Ok(PairTerms { data, anchor_gap, phi_grad, z_grad });
    }

    let m = x_sample.nrows();
    let inv_m = T::cast(1.0 / m as f64);
    let reference = forward(bootstrap, x_sample)?;
    if config.beta > 0.0 {
        let trace = run_forward(phi, &join_embedding(x_sample, z_eff))?;
        let out = trace.output();
        let mut gap_grad = Array2::zeros(out.dim());
        for i in 0..m {
            for ci in 0..out.ncols() {
                let d = out[(i, ci)] - reference[(i, ci)];
                anchor_gap += d * d * inv_m;
                gap_grad[(i, ci)] = T::cast(2.0) * d * inv_m;
            }
        }
        let (pg, input_grad) = backward_trace(phi, &trace, &gap_grad, true)?;
        accumulate(&mut phi_grad, &pg, beta);
        add_z_columns(&mut z_grad, input_grad.as_ref().expect("input grad requested"), data_dim, beta);
    } else {
        // Reported for observability; contributes nothing to the gradient.
        let out = forward(phi, &join_embedding(x_sample, z_eff))?;
        for i in 0..m {
            for ci in 0..out.ncols() {
                let d = out[(i, ci)] - reference[(i, ci)];
                anchor_gap += d * d * inv_m;
            }
        }
    }
    Ok(PairTerms { data, anchor_gap, phi_grad, z_grad })
}

fn accumulate<T: Scalar>(into: &mut ParamVector<T>, add: &ParamVector<T>, scale: T) {
    into.values_mut().zip_mut_with(add.values(), |a, &b| *a += scale * b);
}

/// Adds `scale` times the column sums of the embedding block of an input
/// gradient (columns `data_dim..`) into `z_grad`.
fn add_z_columns<T: Scalar>(z_grad: &mut Array1<T>, input_grad: &Array2<T>, data_dim: usize, scale: T) {
    for row in input_grad.rows() {
        for (q, slot) in z_grad.iter_mut().enumerate() {
            *slot += scale * row[data_dim + q];
        }
    }
}

/// Per-dimension mean and unbiased variance of the embedding cloud.
fn embedding_mean_var<T: Scalar>(embeddings: &[Array1<T>]) -> Result<(Array1<T>, Array1<T>)> {
    let k = embeddings.len();
    if k < 2 {
        return Err(Error::invalid("embedding statistics need k >= 2"));
    }
    let e = embeddings[0].len();
    let inv_k = T::cast(1.0 / k as f64);
    let mut zbar = Array1::zeros(e);
    for z in embeddings {
        for d in 0..e {
            zbar[d] += z[d] * inv_k;
        }
    }
    let inv_km1 = T::cast(1.0 / (k - 1) as f64);
    let mut s2 = Array1::zeros(e);
    for z in embeddings {
        for d in 0..e {
            let dev = z[d] - zbar[d];
            s2[d] += dev * dev * inv_km1;
        }
    }
    Ok((zbar, s2))
}

/// Sum over dimensions of KL(N(mean_d, var_d) || N(0, 1)).
fn kl_value<T: Scalar>(zbar: &Array1<T>, s2: &Array1<T>) -> Result<T> {
    let half = T::cast(0.5);
    let mut total = T::zero();
    for d in 0..zbar.len() {
        if !(s2[d] > T::zero()) {
            return Err(Error::numeric("embedding spread collapsed to zero", Some(d)));
        }
        total += half * (zbar[d] * zbar[d] + s2[d] - T::one() - s2[d].ln());
    }
    Ok(total)
}

/// Gradient of [`kl_value`] w.r.t. one embedding row:
/// `zbar_d / k + (1 - 1 / s2_d) * (z_jd - zbar_d) / (k - 1)` per dimension.
fn kl_row_grad<T: Scalar>(
    z_row: &Array1<T>,
    zbar: &Array1<T>,
    s2: &Array1<T>,
    k: usize,
) -> Array1<T> {
    let inv_k = T::cast(1.0 / k as f64);
    let inv_km1 = T::cast(1.0 / (k - 1) as f64);
    Array1::from_shape_fn(z_row.len(), |d| {
        zbar[d] * inv_k + (T::one() - T::one() / s2[d]) * (z_row[d] - zbar[d]) * inv_km1
    })
}

/// Full loss for one selected pair: data term on the labeled batch,
/// `beta`-weighted reference matching on the unlabeled batch, and the
/// embedding regularizer, with gradients for the generator and the selected
/// embedding row. `eps` is added to the stored embedding before evaluation;
/// the regularizer sees the stored embeddings themselves.
pub fn gpn_loss<T: Scalar>(
    model: &GpnModel<T>,
    x_obs: &Array2<T>,
    y_obs: &Array2<T>,
    x_sample: &Array2<T>,
    pair: usize,
    eps: &Array1<T>,
) -> Result<GpnLossGrad<T>> {
    let config = &model.config;
    if pair >= config.k {
        return Err(Error::invalid(format!("pair index {pair} out of range for k = {}", config.k)));
    }
    if eps.len() != config.embed_dim {
        return Err(Error::shape(
            "gpn_loss noise",
            format!("{} entries", config.embed_dim),
            format!("{}", eps.len()),
        ));
    }
    check_batches(config, x_obs, y_obs, x_sample)?;

    let z_eff = &model.embeddings[pair] + eps;
    let p = pair_terms(config, &model.phi, &model.bootstraps[pair], x_obs, y_obs, x_sample, &z_eff)?;

    let mut kl = T::zero();
    let mut z_grad = p.z_grad;
    if config.kl_weight > 0.0 {
        let klw = T::cast(config.kl_weight);
        let (zbar, s2) = embedding_mean_var(&model.embeddings)?;
        kl = kl_value(&zbar, &s2)?;
        let kg = kl_row_grad(&model.embeddings[pair], &zbar, &s2, config.k);
        for d in 0..z_grad.len() {
            z_grad[d] += klw * kg[d];
        }
    }

    let total = p.data + T::cast(config.beta) * p.anchor_gap + T::cast(config.kl_weight) * kl;
    Ok(GpnLossGrad {
        terms: GpnLossTerms { total, data: p.data, anchor_gap: p.anchor_gap, kl },
        phi_grad: p.phi_grad,
        z_grad,
    })
}

fn check_batches<T: Scalar>(
    config: &GpnConfig,
    x_obs: &Array2<T>,
    y_obs: &Array2<T>,
    x_sample: &Array2<T>,
) -> Result<()> {
    if x_obs.nrows() != y_obs.nrows() {
        return Err(Error::shape(
            "labeled batch",
            format!("{} target rows", x_obs.nrows()),
            format!("{}", y_obs.nrows()),
        ));
    }
    if x_obs.nrows() > 0 && (x_obs.ncols() != config.data_dim() || y_obs.ncols() != config.output_dim()) {
        return Err(Error::shape(
            "labeled batch",
            format!("{} feature and {} target columns", config.data_dim(), config.output_dim()),
            format!("{} and {}", x_obs.ncols(), y_obs.ncols()),
        ));
    }
    if x_sample.nrows() > 0 && x_sample.ncols() != config.data_dim() {
        return Err(Error::shape(
            "unlabeled batch",
            format!("{} feature columns", config.data_dim()),
            format!("{}", x_sample.ncols()),
        ));
    }
    Ok(())
}

/// Mean over pairs of the mean squared generator/reference mismatch on `x`,
/// evaluated without smoothing noise. A training-progress diagnostic.
pub fn mean_anchor_gap<T: Scalar>(model: &GpnModel<T>, x: &Array2<T>) -> Result<T> {
    if x.nrows() == 0 || x.ncols() != model.config.data_dim() {
        return Err(Error::shape(
            "mean_anchor_gap",
            format!("nonempty batch with {} columns", model.config.data_dim()),
            format!("{} x {}", x.nrows(), x.ncols()),
        ));
    }
    let inv_m = T::cast(1.0 / x.nrows() as f64);
    let inv_k = T::cast(1.0 / model.config.k as f64);
    let mut total = T::zero();
    for (z, bootstrap) in model.embeddings.iter().zip(&model.bootstraps) {
        let gen_out = forward(&model.phi, &join_embedding(x, z))?;
        let ref_out = forward(bootstrap, x)?;
        let mut gap = T::zero();
        for (g, r) in gen_out.iter().zip(ref_out.iter()) {
            let d = *g - *r;
            gap += d * d * inv_m;
        }
        total += gap * inv_k;
    }
    Ok(total)
}

/// Epochs, batch sizes, and the update rule shared by the generator and the
/// embeddings.
#[derive(Debug, Clone)]
pub struct GpnTrainSettings<T> {
    pub epochs: usize,
    /// Labeled minibatch size; `None` runs one full-batch step per epoch.
    pub labeled_batch: Option<usize>,
    /// Unlabeled points drawn per step (ignored when beta = 0).
    pub unlabeled_batch: usize,
    pub optimizer: Optimizer<T>,
}

impl<T: Scalar> GpnTrainSettings<T> {
    pub fn full_batch(epochs: usize, unlabeled_batch: usize, optimizer: Optimizer<T>) -> Self {
        Self { epochs, labeled_batch: None, unlabeled_batch, optimizer }
    }
}

/// Post-update view of one training step, for progress observers.
pub struct GpnStepInfo<'a, T> {
    pub step: usize,
    pub terms: GpnLossTerms<T>,
    pub phi: &'a ParamVector<T>,
    pub embeddings: &'a [Array1<T>],
}

/// [`train_gpn`] with a callback after every optimization step.
pub fn train_gpn_observed<T: Scalar>(
    model: &GpnModel<T>,
    labeled: &LabeledDataset<T>,
    pool: &UnlabeledPool<T>,
    settings: &GpnTrainSettings<T>,
    seed: u64,
    observer: &mut dyn FnMut(&GpnStepInfo<'_, T>),
) -> Result<GpnModel<T>> {
    let config = &model.config;
    check_training_inputs(config, labeled, pool, settings)?;
    if settings.epochs == 0 {
        return Ok(model.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = model.phi.clone();
    let mut zs = model.embeddings.clone();
    let mut phi_state = OptimizerState::new(phi.len());
    let mut z_states: Vec<OptimizerState<T>> =
        (0..config.k).map(|_| OptimizerState::new(config.embed_dim)).collect();

    let noise = T::cast(config.noise_scale);
    // Per-pair noise is fixed for the whole run; drawn up front so the
    // stream position does not depend on the visit order.
    let per_pair_eps: Vec<Array1<T>> = match config.noise_mode {
        NoiseMode::PerPair if config.noise_scale > 0.0 => (0..config.k)
            .map(|_| Array1::from_shape_fn(config.embed_dim, |_| noise * T::standard_normal(&mut rng)))
            .collect(),
        _ => Vec::new(),
    };
    let zero_eps: Array1<T> = Array1::zeros(config.embed_dim);

    let n_labeled = labeled.n_rows();
    let mut order: Vec<usize> = (0..n_labeled).collect();
    let mut step = 0usize;

    for _epoch in 0..settings.epochs {
        let chunks: Vec<Vec<usize>> = match settings.labeled_batch {
            Some(b) if n_labeled > 0 => {
                shuffle(&mut order, &mut rng);
                order.chunks(b.max(1)).map(|c| c.to_vec()).collect()
            }
            // Full batch (or no labeled data at all): one step per epoch.
            _ => vec![order.clone()],
        };
        for chunk in chunks {
            let (x_b, y_b) = if chunk.is_empty() {
                (Array2::zeros((0, config.data_dim())), Array2::zeros((0, config.output_dim())))
            } else {
                (labeled.x().select(ndarray::Axis(0), &chunk), labeled.y().select(ndarray::Axis(0), &chunk))
            };

            let pairs: Vec<usize> = match config.pair_schedule {
                PairSchedule::Uniform => vec![rng.random_range(0..config.k)],
                PairSchedule::FullSum => (0..config.k).collect(),
            };
            let step_eps: Array1<T> = if config.noise_mode == NoiseMode::PerStep && config.noise_scale > 0.0 {
                Array1::from_shape_fn(config.embed_dim, |_| noise * T::standard_normal(&mut rng))
            } else {
                zero_eps.clone()
            };
            let x_s: Array2<T> = if config.beta > 0.0 {
                pool.draw(&mut rng, settings.unlabeled_batch)
            } else {
                Array2::zeros((0, config.data_dim()))
            };

            // Pair contributions, averaged so a full-sum step targets the
            // same loss scale the uniform schedule estimates.
            let inv_pairs = T::cast(1.0 / pairs.len() as f64);
            let mut phi_grad = ParamVector::zeros(config.generator_arch.clone());
            let mut data = T::zero();
            let mut gap = T::zero();
            let mut z_grads: Vec<(usize, Array1<T>)> = Vec::with_capacity(pairs.len());
            for &j in &pairs {
                let eps = match config.noise_mode {
                    NoiseMode::PerPair if config.noise_scale > 0.0 => &per_pair_eps[j],
                    NoiseMode::PerPair => &zero_eps,
                    NoiseMode::PerStep => &step_eps,
                };
                let z_eff = &zs[j] + eps;
                let p = pair_terms(config, &phi, &model.bootstraps[j], &x_b, &y_b, &x_s, &z_eff)?;
                accumulate(&mut phi_grad, &p.phi_grad, inv_pairs);
                data += p.data * inv_pairs;
                gap += p.anchor_gap * inv_pairs;
                z_grads.push((j, p.z_grad * inv_pairs));
            }

            let mut kl = T::zero();
            if config.kl_weight > 0.0 {
                let klw = T::cast(config.kl_weight);
                let (zbar, s2) = embedding_mean_var(&zs)?;
                kl = kl_value(&zbar, &s2)?;
                for (j, zg) in z_grads.iter_mut() {
                    let kg = kl_row_grad(&zs[*j], &zbar, &s2, config.k);
                    for d in 0..zg.len() {
                        zg[d] += klw * kg[d];
                    }
                }
            }

            let total = data + T::cast(config.beta) * gap + T::cast(config.kl_weight) * kl;
            if !total.is_finite() {
                return Err(Error::numeric("gpn training diverged", Some(step)));
            }

            optimizer_step(&settings.optimizer, &mut phi_state, phi.values_mut(), phi_grad.values())?;
            for (j, zg) in &z_grads {
                optimizer_step(&settings.optimizer, &mut z_states[*j], &mut zs[*j], zg)?;
            }

            observer(&GpnStepInfo {
                step,
                terms: GpnLossTerms { total, data, anchor_gap: gap, kl },
                phi: &phi,
                embeddings: &zs,
            });
            step += 1;
        }
    }

    Ok(GpnModel {
        config: config.clone(),
        phi,
        embeddings: zs,
        bootstraps: model.bootstraps.clone(),
    })
}

/// Trains the generator and embeddings jointly. Each step draws a pair (or
/// visits all pairs), smoothing noise, a labeled minibatch, and an unlabeled
/// batch, then applies one optimizer update to the generator and the visited
/// embedding rows. The labeled set may be empty; reference matching and the
/// embedding regularizer then drive training alone.
pub fn train_gpn<T: Scalar>(
    model: &GpnModel<T>,
    labeled: &LabeledDataset<T>,
    pool: &UnlabeledPool<T>,
    settings: &GpnTrainSettings<T>,
    seed: u64,
) -> Result<GpnModel<T>> {
    train_gpn_observed(model, labeled, pool, settings, seed, &mut |_| {})
}

fn check_training_inputs<T: Scalar>(
    config: &GpnConfig,
    labeled: &LabeledDataset<T>,
    pool: &UnlabeledPool<T>,
    settings: &GpnTrainSettings<T>,
) -> Result<()> {
    if labeled.n_rows() > 0 {
        if labeled.n_features() != config.data_dim() || labeled.n_outputs() != config.output_dim() {
            return Err(Error::shape(
                "train_gpn labeled data",
                format!("{} features, {} outputs", config.data_dim(), config.output_dim()),
                format!("{} features, {} outputs", labeled.n_features(), labeled.n_outputs()),
            ));
        }
        if config.task == Task::Classification {
            for (i, row) in labeled.y().rows().into_iter().enumerate() {
                let mut total = 0.0;
                for &v in row.iter() {
                    let v = v.to_f64c();
                    if v < -1e-9 {
                        return Err(Error::invalid(format!(
                            "classification target row {i} has a negative entry"
                        )));
                    }
                    total += v;
                }
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "classification target row {i} sums to {total}, expected 1"
                    )));
                }
            }
        }
    }
    if pool.dim() != config.data_dim() {
        return Err(Error::shape(
            "train_gpn unlabeled pool",
            format!("{} features", config.data_dim()),
            format!("{}", pool.dim()),
        ));
    }
    if config.beta > 0.0 && settings.unlabeled_batch == 0 {
        return Err(Error::invalid("unlabeled_batch must be >= 1 when beta > 0"));
    }
    Ok(())
}

fn shuffle<R: Rng + ?Sized>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Draws `n_samples` fresh embeddings from N(0, I) and evaluates the
/// generator at each; classification sets are softmaxed.
pub fn sample_posterior<T: Scalar>(
    model: &GpnModel<T>,
    x: &Array2<T>,
    n_samples: usize,
    seed: u64,
) -> Result<PosteriorSampleSet<T>> {
    if n_samples == 0 {
        return Err(Error::invalid("sample_posterior needs n_samples >= 1"));
    }
    let n = x.nrows();
    let c = model.config.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::zeros((n_samples, n, c));
    for si in 0..n_samples {
        let z = Array1::from_shape_fn(model.config.embed_dim, |_| T::standard_normal(&mut rng));
        let pred = gpn_forward(model, x, &z)?;
        out.slice_mut(s![si, .., ..]).assign(&pred);
    }
    match model.config.task {
        Task::Regression => PosteriorSampleSet::new(out, SampleKind::RegressionValues),
        Task::Classification => PosteriorSampleSet::new(out, SampleKind::Logits)?.softmax(),
    }
}
