//! Anchored ensembles: independently trained networks whose regularizer
//! pulls each member toward its own fixed random anchor.
//!
//! Two flavours. Parameter-regularized (PR) members penalize distance to an
//! anchor parameter vector drawn from the prior, which for linear networks
//! makes each trained member the MAP of a prior recentred at its anchor.
//! Output-regularized (OR) members instead penalize the gap between their
//! outputs and a frozen prior-sampled anchor network's outputs on unlabeled
//! points. Either way the ensemble's spread across members is the
//! uncertainty estimate.
//!
//! Members never read each other's state: member `i`'s anchors, init, and
//! batch order derive from `(seed, i)` alone, so training order cannot
//! change results.

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
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

/// Where the anchor pulls: parameter space or output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularization {
    Parameter,
    Output,
}

/// Ensemble shape and regularization settings.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub arch: MlpArchitecture,
    pub prior: PriorSpec,
    pub regularization: Regularization,
    /// Observation noise scale; 0 turns the PR regularizer off (pure MSE).
    pub noise_std: f64,
    /// Output-anchor weight (OR mode only).
    pub beta: f64,
    pub n_members: usize,
    /// OR anchor networks; `None` reuses the member architecture/prior.
    pub anchor_arch: Option<MlpArchitecture>,
    pub anchor_prior: Option<PriorSpec>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite and >= 0"));
        }
        self.prior.check_arch(&self.arch)?;
        if let (Some(arch), Some(prior)) = (&self.anchor_arch, &self.anchor_prior) {
            prior.check_arch(arch)?;
        }
        Ok(())
    }

    fn anchor_arch(&self) -> &MlpArchitecture {
        self.anchor_arch.as_ref().unwrap_or(&self.arch)
    }

    fn anchor_prior(&self) -> &PriorSpec {
        self.anchor_prior.as_ref().unwrap_or(&self.prior)
    }
}

/// Optimization settings for a training run.
#[derive(Debug, Clone)]
pub struct TrainSettings<T> {
    pub epochs: usize,
    /// Labeled minibatch size; `None` means full batch.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer<T>,
    /// Unlabeled points drawn per step (OR mode).
    pub unlabeled_batch: usize,
}

impl<T: Scalar> TrainSettings<T> {
    pub fn full_batch(epochs: usize, optimizer: Optimizer<T>) -> Self {
        Self {
            epochs,
            batch_size: None,
            optimizer,
            unlabeled_batch: 64,
        }
    }
}

/// Trained members with their immutable anchors.
#[derive(Debug, Clone)]
pub struct EnsembleModel<T> {
    config: EnsembleConfig,
    members: Vec<ParamVector<T>>,
    anchors: Vec<ParamVector<T>>,
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn from_parts(
        config: EnsembleConfig,
        members: Vec<ParamVector<T>>,
        anchors: Vec<ParamVector<T>>,
    ) -> Result<Self> {
        config.validate()?;
        if members.len() != anchors.len() || members.is_empty() {
            return Err(Error::invalid(format!(
                "ensemble needs matching nonempty member/anchor lists, got {}/{}",
                members.len(),
                anchors.len()
            )));
        }
        if members.len() != config.n_members {
            return Err(Error::invalid(format!(
                "config says {} members, got {}",
                config.n_members,
                members.len()
            )));
        }
        for m in &members {
            if m.arch() != &config.arch {
                return Err(Error::invalid("member architecture mismatch"));
            }
        }
        let anchor_arch = config.anchor_arch().clone();
        let expect_anchor = match config.regularization {
            Regularization::Parameter => &config.arch,
            Regularization::Output => &anchor_arch,
        };
        for a in &anchors {
            if a.arch() != expect_anchor {
                return Err(Error::invalid("anchor architecture mismatch"));
            }
        }
        Ok(Self {
            config,
            members,
            anchors,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn members(&self) -> &[ParamVector<T>] {
        &self.members
    }

    pub fn anchors(&self) -> &[ParamVector<T>] {
        &self.anchors
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }
}

/// PR loss: mean squared error plus the anchored prior penalty
/// `sigma^2 / N * sum_d (theta_d - anchor_d)^2 / v_d`, the scaling that makes
/// its minimizer the MAP of the anchor-recentred posterior.
pub fn pr_member_loss<T: Scalar>(
    member: &ParamVector<T>,
    anchor: &ParamVector<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    noise_std: f64,
    prior: &PriorSpec,
) -> Result<T> {
    Ok(pr_member_loss_grad(member, anchor, x, y, noise_std, prior)?.0)
}

/// PR loss with its gradient in the member parameters (anchors are fixed).
pub fn pr_member_loss_grad<T: Scalar>(
    member: &ParamVector<T>,
    anchor: &ParamVector<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    noise_std: f64,
    prior: &PriorSpec,
) -> Result<(T, ParamVector<T>)> {
    if member.arch() != anchor.arch() {
        return Err(Error::invalid("member and anchor architectures differ"));
    }
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::shape(
            "pr_member_loss",
            format!("nonempty batch with matching targets ({n} rows)"),
            format!("{} target rows", y.nrows()),
        ));
    }
    let trace = run_forward(member, x)?;
    let pred = trace.output();
    let inv_n = T::cast(1.0 / n as f64);
    let mut data_loss = T::zero();
    let mut loss_grad = Array2::zeros(pred.dim());
    for i in 0..n {
        for c in 0..pred.ncols() {
            let d = pred[(i, c)] - y[(i, c)];
            data_loss += d * d * inv_n;
            loss_grad[(i, c)] = T::cast(2.0) * d * inv_n;
        }
    }
    let (mut grad, _) = backward_trace(member, &trace, &loss_grad, false)?;
    let mut loss = data_loss;
    if noise_std > 0.0 {
        let variances = prior.param_variances::<T>(member.arch())?;
        let reg_scale = T::cast(noise_std * noise_std / n as f64);
        let gvals = grad.values_mut();
        for (d, (&m, &a)) in member
            .values()
            .iter()
            .zip(anchor.values().iter())
            .enumerate()
        {
            let diff = m - a;
            loss += reg_scale * diff * diff / variances[d];
            gvals[d] += T::cast(2.0) * reg_scale * diff / variances[d];
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("pr_member_loss", None));
    }
    Ok((loss, grad))
}

/// OR loss: mean squared error on the labeled batch plus
/// `beta * mean ||member(x_s) - anchor(x_s)||^2` over the unlabeled batch.
pub fn or_member_loss<T: Scalar>(
    member: &ParamVector<T>,
    anchor_net: &ParamVector<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    x_sample: &Array2<T>,
    beta: f64,
) -> Result<T> {
    Ok(or_member_loss_grad(member, anchor_net, x, y, x_sample, beta)?.0)
}

/// OR loss with gradient in the member parameters (the anchor net is frozen).
pub fn or_member_loss_grad<T: Scalar>(
    member: &ParamVector<T>,
    anchor_net: &ParamVector<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    x_sample: &Array2<T>,
    beta: f64,
) -> Result<(T, ParamVector<T>)> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::shape(
            "or_member_loss",
            format!("nonempty labeled batch with matching targets ({n} rows)"),
            format!("{} target rows", y.nrows()),
        ));
    }
    if beta > 0.0 && x_sample.nrows() == 0 {
        return Err(Error::invalid(
            "output regularization with beta > 0 needs unlabeled points",
        ));
    }
    let trace = run_forward(member, x)?;
    let pred = trace.output();
    let inv_n = T::cast(1.0 / n as f64);
    let mut loss = T::zero();
    let mut loss_grad = Array2::zeros(pred.dim());
    for i in 0..n {
        for c in 0..pred.ncols() {
            let d = pred[(i, c)] - y[(i, c)];
            loss += d * d * inv_n;
            loss_grad[(i, c)] = T::cast(2.0) * d * inv_n;
        }
    }
    let (mut grad, _) = backward_trace(member, &trace, &loss_grad, false)?;
    if beta > 0.0 && x_sample.nrows() > 0 {
        let m_u = x_sample.nrows();
        let anchor_out = forward(anchor_net, x_sample)?;
        let trace_u = run_forward(member, x_sample)?;
        let member_out = trace_u.output();
        if anchor_out.dim() != member_out.dim() {
            return Err(Error::shape(
                "or_member_loss",
                format!("anchor outputs {}x{}", member_out.nrows(), member_out.ncols()),
                format!("{}x{}", anchor_out.nrows(), anchor_out.ncols()),
            ));
        }
        let w = T::cast(beta / m_u as f64);
        let mut delta_grad = Array2::zeros(member_out.dim());
        for i in 0..m_u {
            for c in 0..member_out.ncols() {
                let d = member_out[(i, c)] - anchor_out[(i, c)];
                loss += w * d * d;
                delta_grad[(i, c)] = T::cast(2.0) * w * d;
            }
        }
        let (delta_param_grad, _) = backward_trace(member, &trace_u, &delta_grad, false)?;
        let gvals = grad.values_mut();
        for (d, g) in delta_param_grad.values().iter().enumerate() {
            gvals[d] += *g;
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("or_member_loss", None));
    }
    Ok((loss, grad))
}

/// Trains one member from scratch. Everything random about member `index`
/// (anchor, init, batch order, unlabeled draws) comes from `(seed, index)`,
/// which is what makes members order-independent.
pub fn train_single_member<T: Scalar>(
    config: &EnsembleConfig,
    labeled: &LabeledDataset<T>,
    unlabeled: Option<&UnlabeledPool<T>>,
    settings: &TrainSettings<T>,
    seed: u64,
    index: usize,
) -> Result<(ParamVector<T>, ParamVector<T>)> {
    config.validate()?;
    if labeled.n_rows() == 0 {
        return Err(Error::invalid("ensemble training needs labeled rows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let (anchor, mut member) = match config.regularization {
        Regularization::Parameter => {
            let anchor = sample_prior_params_with(&config.prior, &config.arch, &mut rng)?;
            let member = anchor.clone();
            (anchor, member)
        }
        Regularization::Output => {
            let anchor = sample_prior_params_with(
                config.anchor_prior(),
                config.anchor_arch(),
                &mut rng,
            )?;
            let member = sample_prior_params_with(&config.prior, &config.arch, &mut rng)?;
            (anchor, member)
        }
    };
    if config.regularization == Regularization::Output && config.beta > 0.0 && unlabeled.is_none()
    {
        return Err(Error::invalid(
            "output-regularized training needs an unlabeled pool",
        ));
    }
    let mut opt_state = OptimizerState::new(member.values().len());
    let n = labeled.n_rows();
    let batch = settings.batch_size.unwrap_or(n).min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(batch).enumerate() {
            let x = labeled.x().select(Axis(0), chunk);
            let y = labeled.y().select(Axis(0), chunk);
            let (_, grad) = match config.regularization {
                Regularization::Parameter => pr_member_loss_grad(
                    &member,
                    &anchor,
                    &x,
                    &y,
                    config.noise_std,
                    &config.prior,
                ),
                Regularization::Output => {
                    let x_sample = match unlabeled {
                        Some(pool) if config.beta > 0.0 => {
                            pool.draw(&mut rng, settings.unlabeled_batch)
                        }
                        _ => Array2::zeros((0, labeled.n_features())),
                    };
                    or_member_loss_grad(&member, &anchor, &x, &y, &x_sample, config.beta)
                }
            }
            .map_err(|e| {
                Error::invalid(format!(
                    "member {index}, epoch {epoch}, step {step}: {e}"
                ))
            })?;
            optimizer_step(
                &settings.optimizer,
                &mut opt_state,
                member.values_mut(),
                grad.values(),
            )
            .map_err(|e| {
                Error::invalid(format!(
                    "member {index}, epoch {epoch}, step {step}: {e}"
                ))
            })?;
        }
    }
    Ok((member, anchor))
}

/// Trains all members independently and packs them into a model.
pub fn train_ensemble<T: Scalar>(
    config: &EnsembleConfig,
    labeled: &LabeledDataset<T>,
    unlabeled: Option<&UnlabeledPool<T>>,
    settings: &TrainSettings<T>,
    seed: u64,
) -> Result<EnsembleModel<T>> {
    config.validate()?;
    let mut members = Vec::with_capacity(config.n_members);
    let mut anchors = Vec::with_capacity(config.n_members);
    for index in 0..config.n_members {
        let (member, anchor) =
            train_single_member(config, labeled, unlabeled, settings, seed, index)?;
        members.push(member);
        anchors.push(anchor);
    }
    EnsembleModel::from_parts(config.clone(), members, anchors)
}

/// Evaluates every member on `x`: an (M x N x C) sample set whose draw axis
/// is the member index.
pub fn ensemble_predict<T: Scalar>(
    model: &EnsembleModel<T>,
    x: &Array2<T>,
) -> Result<PosteriorSampleSet<T>> {
    let m = model.n_members();
    let n = x.nrows();
    let c = *model
        .config
        .arch
        .layer_widths
        .last()
        .expect("validated arch");
    let mut out = Array3::zeros((m, n, c));
    for (s, member) in model.members.iter().enumerate() {
        let pred = forward(member, x)?;
        for ni in 0..n {
            for ci in 0..c {
                out[(s, ni, ci)] = pred[(ni, ci)];
            }
        }
    }
    PosteriorSampleSet::new(out, SampleKind::RegressionValues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{rms_map_linear, Gaussian, LinearGaussianModel};
    use crate::nn::{Activation, OutputKind};
    use crate::prior::WeightScaling;
    use approx::assert_relative_eq;
    use ndarray::{array, Array1};

    fn affine_arch() -> MlpArchitecture {
        MlpArchitecture::new(vec![1, 1], Activation::Identity, OutputKind::Identity).unwrap()
    }

    fn affine_prior(v_w: f64, v_b: f64) -> PriorSpec {
        PriorSpec::new(vec![v_w], vec![v_b], WeightScaling::Raw).unwrap()
    }

    fn pr_config(n_members: usize, noise_std: f64) -> EnsembleConfig {
        EnsembleConfig {
            arch: affine_arch(),
            prior: affine_prior(1.0, 1.0),
            regularization: Regularization::Parameter,
            noise_std,
            beta: 0.0,
            n_members,
            anchor_arch: None,
            anchor_prior: None,
        }
    }

    #[test]
    fn pr_loss_zero_at_anchor_with_perfect_fit() {
        let mut member = ParamVector::<f64>::zeros(affine_arch());
        member.values_mut()[0] = 2.0;
        member.values_mut()[1] = -1.0;
        let anchor = member.clone();
        let x = array![[0.5], [1.0]];
        let y = array![[0.0], [1.0]]; // exactly 2x - 1
        let loss =
            pr_member_loss(&member, &anchor, &x, &y, 0.7, &affine_prior(1.0, 1.0)).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_gives_pure_mse() {
        let mut member = ParamVector::<f64>::zeros(affine_arch());
        member.values_mut()[0] = 1.0;
        let anchor = ParamVector::<f64>::zeros(affine_arch());
        let x = array![[1.0], [2.0]];
        let y = array![[0.0], [0.0]];
        let loss =
            pr_member_loss(&member, &anchor, &x, &y, 0.0, &affine_prior(1.0, 1.0)).unwrap();
        // Residuals 1 and 2: MSE = (1 + 4) / 2.
        assert_relative_eq!(loss, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn pr_descent_matches_conjugate_map() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 12;
        let xs = Array2::from_shape_fn((n, 1), |_| f64::standard_normal(&mut rng));
        let ys = Array2::from_shape_fn((n, 1), |(i, _)| {
            0.6 * xs[(i, 0)] + 0.2 + 0.3 * f64::standard_normal(&mut rng)
        });
        let noise = 0.3;
        let prior = affine_prior(1.5, 0.8);
        let mut anchor = ParamVector::<f64>::zeros(affine_arch());
        anchor.values_mut()[0] = 0.4;
        anchor.values_mut()[1] = -0.2;

        let mut member = anchor.clone();
        let mut state = OptimizerState::new(2);
        // Plain gradient descent: on this strictly convex quadratic it
        // contracts geometrically all the way to the optimum, where Adam
        // would orbit at its step-size noise floor.
        let opt = Optimizer::sgd(0.05);
        for _ in 0..8000 {
            let (_, grad) =
                pr_member_loss_grad(&member, &anchor, &xs, &ys, noise, &prior).unwrap();
            optimizer_step(&opt, &mut state, member.values_mut(), grad.values()).unwrap();
        }

        let design = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { xs[(i, 0)] } else { 1.0 });
        let model = LinearGaussianModel::new(
            design,
            ys.column(0).to_owned(),
            noise,
            Gaussian::new(Array1::zeros(2), Array2::from_diag(&array![1.5, 0.8])).unwrap(),
        )
        .unwrap();
        let map = rms_map_linear(&model, &array![0.4, -0.2]).unwrap();
        assert!(
            (member.values()[0] - map[0]).abs() < 1e-6
                && (member.values()[1] - map[1]).abs() < 1e-6,
            "descent ({}, {}) vs closed form ({}, {})",
            member.values()[0],
            member.values()[1],
            map[0],
            map[1]
        );
    }

    #[test]
    fn or_descent_matches_weighted_least_squares() {
        let anchor = {
            let mut a = ParamVector::<f64>::zeros(affine_arch());
            a.values_mut()[0] = -0.5;
            a.values_mut()[1] = 1.0;
            a
        };
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![[0.5], [1.0], [2.5]];
        let x_sample = array![[-1.0], [3.0]];
        let beta = 0.7;

        let mut member = ParamVector::<f64>::zeros(affine_arch());
        let mut state = OptimizerState::new(2);
        let opt = Optimizer::adam(0.05);
        for _ in 0..6000 {
            let (_, grad) =
                or_member_loss_grad(&member, &anchor, &x, &y, &x_sample, beta).unwrap();
            optimizer_step(&opt, &mut state, member.values_mut(), grad.values()).unwrap();
        }

        // Weighted least squares oracle: labeled rows weighted 1/3, anchored
        // rows weighted beta/2 with targets from the anchor net.
        let mut ata = [[0.0f64; 2]; 2];
        let mut atb = [0.0f64; 2];
        let mut add_row = |w: f64, xv: f64, t: f64| {
            let row = [xv, 1.0];
            for i in 0..2 {
                for j in 0..2 {
                    ata[i][j] += w * row[i] * row[j];
                }
                atb[i] += w * row[i] * t;
            }
        };
        for i in 0..3 {
            add_row(1.0 / 3.0, x[(i, 0)], y[(i, 0)]);
        }
        for i in 0..2 {
            let t = -0.5 * x_sample[(i, 0)] + 1.0;
            add_row(beta / 2.0, x_sample[(i, 0)], t);
        }
        let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
        let w_star = (atb[0] * ata[1][1] - atb[1] * ata[0][1]) / det;
        let b_star = (ata[0][0] * atb[1] - ata[1][0] * atb[0]) / det;
        assert!(
            (member.values()[0] - w_star).abs() < 1e-6
                && (member.values()[1] - b_star).abs() < 1e-6,
            "descent ({}, {}) vs oracle ({w_star}, {b_star})",
            member.values()[0],
            member.values()[1]
        );
    }

    #[test]
    fn or_loss_edge_cases() {
        let member = ParamVector::<f64>::zeros(affine_arch());
        let anchor = member.clone();
        let x = array![[1.0]];
        let y = array![[2.0]];
        let empty = Array2::<f64>::zeros((0, 1));
        // beta = 0: pure MSE, empty unlabeled batch allowed.
        let loss = or_member_loss(&member, &anchor, &x, &y, &empty, 0.0).unwrap();
        assert_relative_eq!(loss, 4.0, epsilon = 1e-12);
        // beta > 0 with no unlabeled points is a precondition error.
        assert!(or_member_loss(&member, &anchor, &x, &y, &empty, 0.5).is_err());
        // member == anchor net: the delta term vanishes.
        let xs = array![[0.3], [0.9]];
        let loss = or_member_loss(&member, &anchor, &x, &y, &xs, 5.0).unwrap();
        assert_relative_eq!(loss, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pr_loss_is_convex_along_segments() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((8, 1), |_| f64::standard_normal(&mut rng));
        let y = Array2::from_shape_fn((8, 1), |_| f64::standard_normal(&mut rng));
        let anchor = ParamVector::<f64>::zeros(affine_arch());
        let prior = affine_prior(2.0, 1.0);
        for _ in 0..20 {
            let mut a = ParamVector::<f64>::zeros(affine_arch());
            let mut b = ParamVector::<f64>::zeros(affine_arch());
            for d in 0..2 {
                a.values_mut()[d] = f64::standard_normal(&mut rng);
                b.values_mut()[d] = f64::standard_normal(&mut rng);
            }
            let mut mid = ParamVector::<f64>::zeros(affine_arch());
            for d in 0..2 {
                mid.values_mut()[d] = 0.5 * (a.values()[d] + b.values()[d]);
            }
            let la = pr_member_loss(&a, &anchor, &x, &y, 0.5, &prior).unwrap();
            let lb = pr_member_loss(&b, &anchor, &x, &y, 0.5, &prior).unwrap();
            let lm = pr_member_loss(&mid, &anchor, &x, &y, 0.5, &prior).unwrap();
            assert!(lm <= 0.5 * (la + lb) + 1e-12, "{lm} vs {}", 0.5 * (la + lb));
        }
    }

    #[test]
    fn zero_epochs_returns_anchors_exactly() {
        let config = pr_config(4, 0.4);
        let labeled = LabeledDataset::new(array![[0.0]], array![[1.0]]).unwrap();
        let settings = TrainSettings::full_batch(0, Optimizer::adam(0.01));
        let model = train_ensemble(&config, &labeled, None, &settings, 11).unwrap();
        for (m, a) in model.members().iter().zip(model.anchors()) {
            assert_eq!(m.values(), a.values());
        }
    }

    #[test]
    fn member_training_is_order_independent() {
        let config = pr_config(3, 0.3);
        let labeled = LabeledDataset::new(
            array![[0.0], [0.5], [1.0]],
            array![[0.1], [0.6], [0.9]],
        )
        .unwrap();
        let settings = TrainSettings {
            epochs: 30,
            batch_size: Some(2),
            optimizer: Optimizer::adam(0.02),
            unlabeled_batch: 8,
        };
        let model = train_ensemble(&config, &labeled, None, &settings, 21).unwrap();
        // Retraining member 2 alone reproduces it bit-for-bit.
        let (member2, anchor2) =
            train_single_member(&config, &labeled, None, &settings, 21, 2).unwrap();
        assert_eq!(model.members()[2].values(), member2.values());
        assert_eq!(model.anchors()[2].values(), anchor2.values());
    }

    #[test]
    fn single_member_pr_reaches_shifted_map() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 10;
        let xs = Array2::from_shape_fn((n, 1), |_| f64::standard_normal(&mut rng));
        let ys = Array2::from_shape_fn((n, 1), |(i, _)| 0.5 * xs[(i, 0)] - 0.1);
        let labeled = LabeledDataset::new(xs.clone(), ys.clone()).unwrap();
        let config = pr_config(1, 0.4);
        let settings = TrainSettings::full_batch(3000, Optimizer::adam(0.02));
        let model = train_ensemble(&config, &labeled, None, &settings, 3).unwrap();

        let design = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { xs[(i, 0)] } else { 1.0 });
        let lin = LinearGaussianModel::new(
            design,
            ys.column(0).to_owned(),
            0.4,
            Gaussian::new(Array1::zeros(2), Array2::eye(2)).unwrap(),
        )
        .unwrap();
        let anchor_vec = array![
            model.anchors()[0].values()[0],
            model.anchors()[0].values()[1]
        ];
        let map = rms_map_linear(&lin, &anchor_vec).unwrap();
        assert!(
            (model.members()[0].values()[0] - map[0]).abs() < 1e-5
                && (model.members()[0].values()[1] - map[1]).abs() < 1e-5
        );
    }

    #[test]
    fn untrained_members_have_prior_predictive_variance() {
        // Affine net: Var[f(x)] = x^2 v_w + v_b under the raw prior.
        let config = EnsembleConfig {
            n_members: 400,
            ..pr_config(400, 0.4)
        };
        let labeled = LabeledDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        let settings = TrainSettings::full_batch(0, Optimizer::adam(0.01));
        let model = train_ensemble(&config, &labeled, None, &settings, 17).unwrap();
        let x = array![[0.0], [1.0], [2.0]];
        let set = ensemble_predict(&model, &x).unwrap();
        let var = set.channel_variances().unwrap();
        for (i, &xv) in [0.0f64, 1.0, 2.0].iter().enumerate() {
            let expect = xv * xv * 1.0 + 1.0;
            let rel = (var[(i, 0)] - expect).abs() / expect;
            // Chi-square spread of a 400-sample variance is about 7% (1 SE).
            assert!(rel < 0.22, "x={xv}: var {} vs {expect}", var[(i, 0)]);
        }
    }

    #[test]
    fn sine_ensemble_spreads_more_at_boundaries() {
        let (labeled, _) = crate::data::default_sine_task::<f64>(0.25, 5).unwrap();
        let arch = MlpArchitecture::new(vec![1, 64, 1], Activation::Tanh, OutputKind::Identity)
            .unwrap();
        // First-layer bias std 2 spreads the tanh transition points across
        // the whole domain, so the prior carries genuine variability at the
        // boundaries that the six inner observations cannot pin down.
        let config = EnsembleConfig {
            arch: arch.clone(),
            prior: PriorSpec::new(vec![2.0, 2.0], vec![4.0, 0.25], WeightScaling::FanIn).unwrap(),
            regularization: Regularization::Parameter,
            noise_std: 0.25,
            beta: 0.0,
            n_members: 10,
            anchor_arch: None,
            anchor_prior: None,
        };
        // Plain gradient descent: parameters with no data gradient stay at
        // their anchors, preserving boundary diversity, where Adam's
        // scale-free steps would collapse the members onto one function.
        // The step size respects the width-64 output layer's curvature.
        let settings = TrainSettings::full_batch(30_000, Optimizer::sgd(0.005));
        let model = train_ensemble(&config, &labeled, None, &settings, 2).unwrap();
        let grid = array![[0.0], [-2.0], [2.0]];
        let set = ensemble_predict(&model, &grid).unwrap();
        let var = set.channel_variances().unwrap();
        let centre = var[(0, 0)];
        let edges = 0.5 * (var[(1, 0)] + var[(2, 0)]);
        assert!(
            centre < edges,
            "variance near data {centre} should undercut boundary {edges}"
        );
    }

    #[test]
    fn predict_shapes_and_member_permutation() {
        let config = pr_config(3, 0.2);
        let labeled = LabeledDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        let settings = TrainSettings::full_batch(0, Optimizer::adam(0.01));
        let model = train_ensemble(&config, &labeled, None, &settings, 8).unwrap();
        let x = array![[0.5], [1.5]];
        let set = ensemble_predict(&model, &x).unwrap();
        assert_eq!(set.samples().dim(), (3, 2, 1));
        // Reversing members reverses the draw axis only.
        let reversed = EnsembleModel::from_parts(
            model.config().clone(),
            model.members().iter().rev().cloned().collect(),
            model.anchors().iter().rev().cloned().collect(),
        )
        .unwrap();
        let rset = ensemble_predict(&reversed, &x).unwrap();
        for s in 0..3 {
            for ni in 0..2 {
                assert_eq!(
                    set.samples()[(s, ni, 0)],
                    rset.samples()[(2 - s, ni, 0)]
                );
            }
        }
    }

    #[test]
    fn single_member_predict_is_one_forward_pass() {
        let config = pr_config(1, 0.2);
        let labeled = LabeledDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        let settings = TrainSettings::full_batch(0, Optimizer::adam(0.01));
        let model = train_ensemble(&config, &labeled, None, &settings, 4).unwrap();
        let x = array![[0.25]];
        let set = ensemble_predict(&model, &x).unwrap();
        let direct = forward(&model.members()[0], &x).unwrap();
        assert_eq!(set.n_draws(), 1);
        assert_eq!(set.samples()[(0, 0, 0)], direct[(0, 0)]);
    }
}
