//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line with the measured values next to the limits they are held
//! to (run with `--nocapture` to see the lines for passing tests too).
//!
//! Expensive artifacts (trained models, MCMC chains, Monte-Carlo instance
//! sets) are built once in shared lazy fixtures and reused by every
//! criterion that needs them.

use std::sync::LazyLock;
use std::time::{Duration, Instant};

use gpnkit_core::data::{
    load_superconductor, split_by_target, validation_split, InSide, LabeledDataset, SplitSpec,
    UnlabeledPool,
};
use gpnkit_core::ensemble::{train_single_member, EnsembleConfig, Regularization, TrainSettings};
use gpnkit_core::gpn::{
    gpn_loss, init_gpn, sample_posterior, train_gpn, GpnConfig, GpnModel, GpnTrainSettings,
    NoiseMode, PairSchedule, Task,
};
use gpnkit_core::linalg::CholeskyFactor;
use gpnkit_core::linear::{
    exact_anchor_dist, exact_output_anchor_dist, output_space_check, output_space_posterior,
    parameter_space_check, Gaussian, LinearGaussianModel, MomentCheck,
};
use gpnkit_core::mcmc::{
    network_posterior_target, posterior_predictive, predictive_split_rhat, run_chains, McmcConfig,
};
use gpnkit_core::metrics::{
    confidence_intervals, mean_entropy, ood_auc, oracle_compare, variance_score,
    PosteriorSampleSet, SampleKind,
};
use gpnkit_core::nn::{forward, Activation, MlpArchitecture, Optimizer, OutputKind};
use gpnkit_core::prior::{sample_prior_params_with, PriorSpec, WeightScaling};
use gpnkit_core::{data, Scalar};
use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the per-criterion verdict line and passes the flag through so the
/// caller can assert on it.
fn verdict(tag: &str, pass: bool, detail: &str) -> bool {
    println!("[{tag}] {} - {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// Shared fixture: seeded linear-Gaussian instances (criteria 1-3).
// ---------------------------------------------------------------------------

struct LinearInstance {
    label: String,
    model: LinearGaussianModel<f64>,
    /// Output-space evaluation rows, square (M = P) and full rank so the
    /// prior pushforward covariance is invertible.
    features: Array2<f64>,
}

const N_ANCHORS: usize = 50_000;

static LINEAR_INSTANCES: LazyLock<Vec<LinearInstance>> = LazyLock::new(|| {
    let sigmas = [0.5, 1.0, 0.3, 2.0, 0.7];
    (0..10usize)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
            let p = (i % 5) + 1;
            // One instance with no observations at all; the rest spread over
            // 1..=30 rows.
            let n = if i == 0 {
                0
            } else {
                rng.random_range(1..=30)
            };
            let sigma = sigmas[i % sigmas.len()];
            let a = Array2::from_shape_fn((p, p), |_| f64::standard_normal(&mut rng));
            let cov = a.t().dot(&a) / p as f64 + Array2::<f64>::eye(p) * 0.3;
            let mean = Array1::from_shape_fn(p, |_| f64::standard_normal(&mut rng));
            let prior = Gaussian::new(mean, cov).expect("prior");
            let design = Array2::from_shape_fn((n, p), |_| f64::standard_normal(&mut rng));
            let theta_star = prior.sampler().expect("sampler").draw(&mut rng);
            let y = design.dot(&theta_star)
                + Array1::from_shape_fn(n, |_| sigma * f64::standard_normal(&mut rng));
            let model = LinearGaussianModel::new(design, y, sigma, prior).expect("model");
            let features = Array2::from_shape_fn((p, p), |_| f64::standard_normal(&mut rng));
            LinearInstance {
                label: format!("P={p} N={n} sigma={sigma}"),
                model,
                features,
            }
        })
        .collect()
});

fn moment_summary(check: &MomentCheck) -> String {
    format!(
        "mean {:.2} SE, cov {:.2}% Frobenius",
        check.max_mean_z(),
        100.0 * check.cov_rel_frobenius
    )
}

#[test]
fn c1_conjugate_exactness() {
    let start = Instant::now();
    let mut worst_mean = 0.0f64;
    let mut worst_cov = 0.0f64;
    let mut failures = Vec::new();
    for (i, inst) in LINEAR_INSTANCES.iter().enumerate() {
        let anchor = exact_anchor_dist(&inst.model).expect("anchor dist");
        let check =
            parameter_space_check(&inst.model, &anchor, N_ANCHORS, 1000 + i as u64).expect("check");
        worst_mean = worst_mean.max(check.max_mean_z());
        worst_cov = worst_cov.max(check.cov_rel_frobenius);
        if !(check.mean_within(3.0) && check.cov_within(0.02)) {
            failures.push(format!("{} ({})", inst.label, moment_summary(&check)));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    let detail = format!(
        "10 instances x {N_ANCHORS} anchors: worst mean {worst_mean:.2} SE (limit 3), worst cov \
         {:.2}% (limit 2%), {:.1}s (limit 60s){}",
        100.0 * worst_cov,
        secs(elapsed),
        if failures.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failures.join("; "))
        }
    );
    assert!(verdict("C1 conjugate exactness", pass, &detail), "{detail}");
}

#[test]
fn c2_output_space_match_with_negative_control() {
    // Exact output-space anchors must reproduce the pushforward posterior;
    // deliberately halving the anchor covariance must break the same check.
    let mut worst_mean = 0.0f64;
    let mut worst_cov = 0.0f64;
    let mut exact_failures = Vec::new();
    let mut control_failures = 0usize;
    for (i, inst) in LINEAR_INSTANCES.iter().enumerate() {
        let anchor = exact_output_anchor_dist(&inst.model, &inst.features).expect("anchor");
        let check = output_space_check(&inst.model, &inst.features, &anchor, N_ANCHORS, 2000 + i as u64)
            .expect("check");
        worst_mean = worst_mean.max(check.max_mean_z());
        worst_cov = worst_cov.max(check.cov_rel_frobenius);
        if !(check.mean_within(3.0) && check.cov_within(0.02)) {
            exact_failures.push(format!("{} ({})", inst.label, moment_summary(&check)));
        }

        let spaces = output_space_posterior(&inst.model, &inst.features).expect("spaces");
        let halved = Gaussian::new(
            spaces.prior.mean().clone(),
            spaces.prior.cov() * 0.5,
        )
        .expect("halved anchor");
        let control =
            output_space_check(&inst.model, &inst.features, &halved, N_ANCHORS, 3000 + i as u64)
                .expect("control check");
        if !(control.mean_within(3.0) && control.cov_within(0.02)) {
            control_failures += 1;
        }
    }
    let pass = exact_failures.is_empty() && control_failures > 0;
    let detail = format!(
        "exact anchors: worst mean {worst_mean:.2} SE (limit 3), worst cov {:.2}% (limit 2%); \
         halved-covariance control fails {control_failures}/10 instances (needs >= 1){}",
        100.0 * worst_cov,
        if exact_failures.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", exact_failures.join("; "))
        }
    );
    assert!(verdict("C2 output-space match", pass, &detail), "{detail}");
}

#[test]
fn c3_overestimation_under_prior_anchors() {
    // Claim under test: anchors drawn with the plain prior pushforward
    // covariance (no likelihood inflation) can only OVER-estimate posterior
    // variance, i.e. every empirical MAP-sample marginal variance is at
    // least the analytic value minus 3 SE.
    //
    // The closed form says otherwise: the MAP map is affine, so those
    // anchors give Var = S_post S_prior^-1 S_post, which is at most S_post
    // and strictly below it wherever the data are informative. The check
    // below runs the claim exactly as stated and prints the closed-form
    // prediction next to the Monte-Carlo estimate, so a failure here
    // indicts the claim, not the sampler.
    let mut worst_short = f64::MIN;
    let mut worst_label = String::new();
    let mut closed_form_gap = 0.0f64;
    let mut pass = true;
    for (i, inst) in LINEAR_INSTANCES.iter().enumerate() {
        let spaces = output_space_posterior(&inst.model, &inst.features).expect("spaces");
        let anchor = spaces.prior.clone();
        let check = output_space_check(&inst.model, &inst.features, &anchor, N_ANCHORS, 4000 + i as u64)
            .expect("check");
        let short = check.max_var_shortfall_z();
        if short > worst_short {
            worst_short = short;
            worst_label = inst.label.clone();
        }
        if short > 3.0 {
            pass = false;
        }
        // Closed form: S_post S_Yhat^-1 S_post, compared per marginal.
        let predicted = {
            let half = CholeskyFactor::new(spaces.prior.cov())
                .expect("prior factor")
                .solve_mat(spaces.posterior.cov())
                .expect("solve");
            spaces.posterior.cov().dot(&half)
        };
        for (d, &emp) in check.empirical_var.iter().enumerate() {
            let pred = predicted[(d, d)];
            let rel = (emp - pred).abs() / pred.max(f64::MIN_POSITIVE);
            closed_form_gap = closed_form_gap.max(rel);
        }
    }
    let detail = format!(
        "worst marginal-variance shortfall {worst_short:.1} SE (limit 3) at {worst_label}; \
         Monte-Carlo agrees with the closed form Var = S_post S_prior^-1 S_post to \
         {:.1}% everywhere, so the shortfall is real: plain prior-covariance anchors \
         UNDER-estimate posterior variance wherever data are informative",
        100.0 * closed_form_gap
    );
    assert!(verdict("C3 over-estimation property", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Shared fixture: 6-observation sine task, trained generator + MCMC oracle
// (criteria 4 and 9).
// ---------------------------------------------------------------------------

const SINE_NOISE: f64 = 0.25;
const SINE_TASK_SEED: u64 = 17;
const SINE_INIT_SEED: u64 = 100;
const SINE_TRAIN_SEED: u64 = 101;

fn sine_gpn_config(kl_weight: f64) -> GpnConfig {
    let embed_dim = 2;
    GpnConfig {
        k: 24,
        embed_dim,
        beta: 0.1,
        noise_scale: 0.2,
        // Piecewise-linear reference nets: their prior spread grows with
        // distance from the data region instead of saturating, which is the
        // regime the uncertainty comparison below exercises.
        bootstrap_arch: MlpArchitecture::new(
            vec![1, 16, 1],
            Activation::Relu,
            OutputKind::Identity,
        )
        .expect("bootstrap arch"),
        bootstrap_prior: PriorSpec::new(vec![2.0, 2.0], vec![0.5, 0.5], WeightScaling::FanIn)
            .expect("bootstrap prior"),
        generator_arch: MlpArchitecture::new(
            vec![1 + embed_dim, 32, 32, 1],
            Activation::Relu,
            OutputKind::Identity,
        )
        .expect("generator arch"),
        sigma_eps: SINE_NOISE,
        kl_weight,
        task: Task::Regression,
        pair_schedule: PairSchedule::FullSum,
        noise_mode: NoiseMode::PerStep,
    }
}

fn sine_train_settings() -> GpnTrainSettings<f64> {
    GpnTrainSettings {
        epochs: 10_000,
        labeled_batch: None,
        unlabeled_batch: 32,
        optimizer: Optimizer::adam(3e-3),
    }
}

struct SineFixture {
    labeled: LabeledDataset<f64>,
    grid: Array2<f64>,
    gpn: GpnModel<f64>,
    oracle_rhat: f64,
    oracle_set: PosteriorSampleSet<f64>,
    build_time: Duration,
}

static SINE_FIXTURE: LazyLock<SineFixture> = LazyLock::new(|| {
    let start = Instant::now();
    let (labeled, pool) = data::default_sine_task::<f64>(SINE_NOISE, SINE_TASK_SEED).expect("task");
    let grid = Array2::from_shape_fn((101, 1), |(i, _)| -2.0 + 4.0 * i as f64 / 100.0);

    let config = sine_gpn_config(1.0);
    let model = init_gpn::<f64>(&config, SINE_INIT_SEED).expect("init");
    let gpn = train_gpn(&model, &labeled, &pool, &sine_train_settings(), SINE_TRAIN_SEED)
        .expect("train");

    // Ground-truth chains over the same architecture and prior as the
    // generator's bootstrap reference nets, so both methods approximate a
    // posterior under the same function prior.
    let oracle_arch = config.bootstrap_arch.clone();
    let oracle_prior = config.bootstrap_prior.clone();
    let x_obs = labeled.x().clone();
    let y_obs = labeled.y().clone();
    let target = network_posterior_target(&x_obs, &y_obs, SINE_NOISE, &oracle_prior);
    let mcmc_config = McmcConfig {
        proposal_std: 0.05,
        n_chains: 4,
        burn_in: 100_000,
        thin: 60,
        n_samples: 800,
        seed: 77,
        adapt_proposal: true,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(78);
    let inits: Vec<_> = (0..mcmc_config.n_chains)
        .map(|_| {
            sample_prior_params_with::<f64, _>(&oracle_prior, &oracle_arch, &mut init_rng)
                .expect("oracle init")
        })
        .collect();
    let chains = run_chains(&target, &inits, &mcmc_config).expect("chains");
    let oracle_rhat = predictive_split_rhat(&chains, &grid).expect("rhat");
    let oracle_set = posterior_predictive(&chains, &grid).expect("predictive");

    SineFixture {
        labeled,
        grid,
        gpn,
        oracle_rhat,
        oracle_set,
        build_time: start.elapsed(),
    }
});

#[test]
fn c4_sine_posterior_matches_mcmc_oracle() {
    let fix = &*SINE_FIXTURE;
    let gpn_set = sample_posterior(&fix.gpn, &fix.grid, 100, 7).expect("grid samples");
    let cmp = oracle_compare(&gpn_set, &fix.oracle_set).expect("compare");

    let obs_set = sample_posterior(&fix.gpn, fix.labeled.x(), 200, 8).expect("obs samples");
    let edge = ndarray::array![[-2.0], [2.0]];
    let edge_set = sample_posterior(&fix.gpn, &edge, 200, 8).expect("edge samples");
    let obs_std = variance_score(&obs_set).expect("obs var").mapv(f64::sqrt);
    let edge_std = variance_score(&edge_set).expect("edge var").mapv(f64::sqrt);
    let ratio = obs_std.mean().unwrap() / edge_std.mean().unwrap();

    let pass = fix.oracle_rhat < 1.1
        && cmp.std_correlation > 0.8
        && ratio < 0.5
        && fix.build_time < Duration::from_secs(15 * 60);
    let detail = format!(
        "oracle split-Rhat {:.3} (limit 1.1), std correlation r {:.3} over 101 grid points \
         (limit > 0.8), observed/boundary std ratio {:.2} (limit < 0.5), fixture build {:.0}s \
         (limit 900s)",
        fix.oracle_rhat,
        cmp.std_correlation,
        ratio,
        secs(fix.build_time)
    );
    assert!(verdict("C4 sine vs MCMC oracle", pass, &detail), "{detail}");
}

#[test]
fn c9_embedding_regularizer_effect() {
    let fix = &*SINE_FIXTURE;
    let (mean, std) = fix.gpn.embedding_moments().expect("moments");
    let reg_ok = mean.iter().all(|m| m.abs() < 0.2) && std.iter().all(|s| (s - 1.0).abs() < 0.3);

    // Negative control: identical run with the embedding regularizer off
    // must let the statistics drift out of those bounds somewhere.
    let (labeled, pool) = data::default_sine_task::<f64>(SINE_NOISE, SINE_TASK_SEED).expect("task");
    let config = sine_gpn_config(0.0);
    let model = init_gpn::<f64>(&config, SINE_INIT_SEED).expect("init");
    let free = train_gpn(&model, &labeled, &pool, &sine_train_settings(), SINE_TRAIN_SEED)
        .expect("train");
    let (free_mean, free_std) = free.embedding_moments().expect("moments");
    let control_violates = free_mean.iter().any(|m| m.abs() >= 0.2)
        || free_std.iter().any(|s| (s - 1.0).abs() >= 0.3);

    let fmt = |v: &Array1<f64>| {
        v.iter()
            .map(|x| format!("{x:.2}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let pass = reg_ok && control_violates;
    let detail = format!(
        "with regularizer: |mean| = [{}] (limit 0.2), std = [{}] (limit 1 +/- 0.3); \
         without: mean [{}], std [{}] violates somewhere: {control_violates}",
        fmt(&mean.mapv(f64::abs)),
        fmt(&std),
        fmt(&free_mean),
        fmt(&free_std)
    );
    assert!(verdict("C9 embedding regularizer", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Shared fixture: tabular detection task, generator vs anchored ensemble
// under a wall-clock budget (criteria 5 and 6).
// ---------------------------------------------------------------------------

const TABULAR_TAU: f64 = 13.9;

struct TabularFixture {
    gpn_auc: f64,
    gpn_time: Duration,
    ci_width: f64,
    rmse: f64,
    /// Cumulative ensemble curve: (members, cumulative train seconds, AUC).
    ensemble_curve: Vec<(usize, f64, f64)>,
    /// Ensemble AUC at the largest member count within the generator's
    /// wall-clock budget (at least two members so variance is defined).
    budget_auc: f64,
    budget_members: usize,
    budget_time: f64,
    build_time: Duration,
}

static TABULAR_FIXTURE: LazyLock<TabularFixture> = LazyLock::new(|| {
    let start = Instant::now();
    let ds = load_superconductor::<f64>(3000, 1).expect("dataset");
    let (train, test) = validation_split(&ds, 0.25, 2).expect("test split");
    let split = |d: &LabeledDataset<f64>| {
        split_by_target(
            d,
            &SplitSpec::TargetThreshold {
                tau: TABULAR_TAU,
                in_side: InSide::Above,
            },
        )
        .expect("threshold split")
    };
    let train_split = split(&train);
    let test_split = split(&test);

    // Targets are standardized by the labeled training set's own scale;
    // every reported loss and interval width below is in those units.
    let train_targets = train_split.in_dist.targets_scalar().expect("targets");
    let t_mean = train_targets.mean().unwrap();
    let t_std = {
        let n = train_targets.len() as f64;
        (train_targets.mapv(|v| (v - t_mean) * (v - t_mean)).sum() / (n - 1.0)).sqrt()
    };
    let normalize = |d: &LabeledDataset<f64>| {
        LabeledDataset::new(d.x().clone(), d.y().mapv(|v| (v - t_mean) / t_std)).expect("normalize")
    };
    let labeled = normalize(&train_split.in_dist);
    let test_in = normalize(&test_split.in_dist);
    let test_ood = normalize(&test_split.ood);
    // The unlabeled pool is the complete training fold's features, both
    // sides of the threshold, labels dropped.
    let pool = UnlabeledPool::from_dataset(&train);

    let n_features = ds.n_features();
    let embed_dim = 10;
    let config = GpnConfig {
        k: 100,
        embed_dim,
        beta: 0.1,
        noise_scale: 0.1,
        bootstrap_arch: MlpArchitecture::new(
            vec![n_features, 16, 1],
            Activation::Tanh,
            OutputKind::Identity,
        )
        .expect("bootstrap arch"),
        bootstrap_prior: PriorSpec::new(vec![2.0, 2.0], vec![0.5, 0.5], WeightScaling::FanIn)
            .expect("bootstrap prior"),
        generator_arch: MlpArchitecture::new(
            vec![n_features + embed_dim, 128, 128, 128, 1],
            Activation::Relu,
            OutputKind::Identity,
        )
        .expect("generator arch"),
        sigma_eps: 0.3,
        kl_weight: 1.0,
        task: Task::Regression,
        pair_schedule: PairSchedule::Uniform,
        noise_mode: NoiseMode::PerStep,
    };
    let settings = GpnTrainSettings {
        epochs: 150,
        labeled_batch: Some(128),
        unlabeled_batch: 128,
        optimizer: Optimizer::adam(1e-3),
    };
    let model = init_gpn::<f64>(&config, 40).expect("init");
    let gpn_start = Instant::now();
    let gpn = train_gpn(&model, &labeled, &pool, &settings, 41).expect("train gpn");
    let gpn_time = gpn_start.elapsed();

    let n_in = test_in.n_rows();
    let x_eval = concatenate(Axis(0), &[test_in.x().view(), test_ood.x().view()]).expect("stack");
    let samples = sample_posterior(&gpn, &x_eval, 100, 42).expect("samples");
    let scores = variance_score(&samples).expect("scores");
    let gpn_auc = ood_auc(
        &scores.as_slice().unwrap()[..n_in],
        &scores.as_slice().unwrap()[n_in..],
    )
    .expect("auc")
    .auc;

    let in_set = PosteriorSampleSet::new(
        samples.samples().slice(s![.., ..n_in, ..]).to_owned(),
        SampleKind::RegressionValues,
    )
    .expect("in slice");
    let ci = confidence_intervals(&in_set, test_in.y(), 0.95).expect("ci");
    let mean_pred = in_set.mean_prediction();
    let rmse = ((&mean_pred - test_in.y()).mapv(|d| d * d).mean().unwrap()).sqrt();

    // Anchored ensemble baseline at the same width and step budget, trained
    // one member at a time so the cumulative AUC-vs-time curve is measured
    // with per-member timing.
    let ens_config = EnsembleConfig {
        arch: MlpArchitecture::new(
            vec![n_features, 128, 128, 128, 1],
            Activation::Relu,
            OutputKind::Identity,
        )
        .expect("member arch"),
        prior: PriorSpec::new(
            vec![2.0, 2.0, 2.0, 2.0],
            vec![0.5, 0.5, 0.5, 0.5],
            WeightScaling::FanIn,
        )
        .expect("member prior"),
        regularization: Regularization::Parameter,
        noise_std: 0.3,
        beta: 0.0,
        n_members: 1,
        anchor_arch: None,
        anchor_prior: None,
    };
    let ens_settings = TrainSettings {
        epochs: settings.epochs,
        batch_size: Some(128),
        optimizer: Optimizer::adam(1e-3),
        unlabeled_batch: 0,
    };
    let mut member_preds: Vec<Array2<f64>> = Vec::new();
    let mut ensemble_curve = Vec::new();
    let mut cumulative = Duration::ZERO;
    for index in 0..64usize {
        let member_start = Instant::now();
        let (member, _) =
            train_single_member(&ens_config, &labeled, None, &ens_settings, 43, index)
                .expect("member");
        cumulative += member_start.elapsed();
        member_preds.push(forward(&member, &x_eval).expect("member forward"));
        if member_preds.len() >= 2 {
            let m = member_preds.len();
            let mut stack = Array3::zeros((m, x_eval.nrows(), 1));
            for (si, pred) in member_preds.iter().enumerate() {
                stack.slice_mut(s![si, .., ..]).assign(pred);
            }
            let set = PosteriorSampleSet::new(stack, SampleKind::RegressionValues).expect("set");
            let ens_scores = variance_score(&set).expect("ens scores");
            let auc = ood_auc(
                &ens_scores.as_slice().unwrap()[..n_in],
                &ens_scores.as_slice().unwrap()[n_in..],
            )
            .expect("ens auc")
            .auc;
            ensemble_curve.push((m, secs(cumulative), auc));
            let reached = auc >= gpn_auc - 0.02;
            if cumulative > gpn_time.mul_f64(2.05) || (reached && secs(cumulative) <= 2.0 * secs(gpn_time)) {
                break;
            }
        }
    }

    let budget = ensemble_curve
        .iter()
        .filter(|(_, t, _)| *t <= secs(gpn_time))
        .next_back()
        .or_else(|| ensemble_curve.first())
        .copied()
        .expect("at least one ensemble point");

    TabularFixture {
        gpn_auc,
        gpn_time,
        ci_width: ci.mean_width,
        rmse,
        ensemble_curve,
        budget_auc: budget.2,
        budget_members: budget.0,
        budget_time: budget.1,
        build_time: start.elapsed(),
    }
});

#[test]
fn c5_tabular_detection_and_interval_scale() {
    let fix = &*TABULAR_FIXTURE;
    let pass = fix.gpn_auc >= 0.85
        && fix.ci_width <= 3.0 * fix.rmse
        && fix.budget_auc < fix.gpn_auc
        && fix.build_time < Duration::from_secs(60 * 60);
    let detail = format!(
        "generator detection AUC {:.3} (floor 0.85); in-dist 95% interval width {:.3} vs \
         3x standardized RMSE {:.3}; ensemble at the same wall-clock budget ({} members, \
         {:.1}s vs generator {:.1}s) reaches AUC {:.3} < {:.3}; fixture build {:.0}s (limit 3600s)",
        fix.gpn_auc,
        fix.ci_width,
        3.0 * fix.rmse,
        fix.budget_members,
        fix.budget_time,
        secs(fix.gpn_time),
        fix.budget_auc,
        fix.gpn_auc,
        secs(fix.build_time)
    );
    assert!(verdict("C5 tabular detection", pass, &detail), "{detail}");
}

#[test]
fn c6_scaling_trend() {
    let fix = &*TABULAR_FIXTURE;
    let gpn_secs = secs(fix.gpn_time);
    // Every cumulative-ensemble checkpoint inside twice the generator's
    // training time must still trail its AUC by more than 0.02.
    let early_parity: Vec<&(usize, f64, f64)> = fix
        .ensemble_curve
        .iter()
        .filter(|(_, t, auc)| *t <= 2.0 * gpn_secs && *auc >= fix.gpn_auc - 0.02)
        .collect();
    let covered = fix
        .ensemble_curve
        .last()
        .map(|(_, t, _)| *t > 2.0 * gpn_secs)
        .unwrap_or(false);
    let pass = early_parity.is_empty() && covered;
    let last = fix.ensemble_curve.last().copied().unwrap_or((0, 0.0, 0.0));
    let best = fix
        .ensemble_curve
        .iter()
        .map(|(_, _, a)| *a)
        .fold(f64::MIN, f64::max);
    let detail = format!(
        "generator: AUC {:.3} in {:.1}s; ensemble curve measured to {} members / {:.1}s \
         ({:.1}x generator time), best AUC {:.3}; no checkpoint within 2x reaches \
         AUC - 0.02 = {:.3}: {}",
        fix.gpn_auc,
        gpn_secs,
        last.0,
        last.1,
        last.1 / gpn_secs,
        best,
        fix.gpn_auc - 0.02,
        early_parity.is_empty()
    );
    assert!(verdict("C6 scaling trend", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Criterion 7: generator loss gradients vs finite differences across random
// configurations.
// ---------------------------------------------------------------------------

struct GradCase {
    config: GpnConfig,
    x_obs: Array2<f64>,
    y_obs: Array2<f64>,
    x_sample: Array2<f64>,
    pair: usize,
    eps: Array1<f64>,
    seed: u64,
}

fn random_grad_case(case_index: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(7000 + case_index);
    let task = if rng.random_range(0..2) == 0 {
        Task::Regression
    } else {
        Task::Classification
    };
    let d_in = rng.random_range(1..=3);
    let d_out = match task {
        Task::Regression => rng.random_range(1..=2),
        Task::Classification => rng.random_range(2..=3),
    };
    let embed_dim = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let kl_weight = if k >= 2 && rng.random_range(0..2) == 0 {
        rng.random_range(2..=12) as f64 / 10.0
    } else {
        0.0
    };
    let beta = if rng.random_range(0..2) == 0 {
        rng.random_range(2..=10) as f64 / 10.0
    } else {
        0.0
    };
    let hidden = if rng.random_range(0..2) == 0 {
        Activation::Tanh
    } else {
        Activation::Identity
    };
    let boot_hidden = rng.random_range(2..=5);
    let gen_hidden = rng.random_range(3..=6);
    let gen_widths = if rng.random_range(0..2) == 0 {
        vec![d_in + embed_dim, gen_hidden, d_out]
    } else {
        vec![d_in + embed_dim, gen_hidden, gen_hidden, d_out]
    };
    let config = GpnConfig {
        k,
        embed_dim,
        beta,
        noise_scale: 0.1,
        bootstrap_arch: MlpArchitecture::new(
            vec![d_in, boot_hidden, d_out],
            Activation::Tanh,
            OutputKind::Identity,
        )
        .expect("bootstrap arch"),
        bootstrap_prior: PriorSpec::uniform(2, 0.8, WeightScaling::Raw).expect("prior"),
        generator_arch: MlpArchitecture::new(gen_widths, hidden, OutputKind::Identity)
            .expect("generator arch"),
        sigma_eps: 0.25,
        kl_weight,
        task,
        pair_schedule: PairSchedule::Uniform,
        noise_mode: NoiseMode::PerStep,
    };
    let n_obs = rng.random_range(0..=4);
    let x_obs = Array2::from_shape_fn((n_obs, d_in), |_| f64::standard_normal(&mut rng));
    let y_obs = match task {
        Task::Regression => Array2::from_shape_fn((n_obs, d_out), |_| {
            f64::standard_normal(&mut rng)
        }),
        Task::Classification => {
            let mut y = Array2::zeros((n_obs, d_out));
            for i in 0..n_obs {
                y[(i, rng.random_range(0..d_out))] = 1.0;
            }
            y
        }
    };
    let n_sample = if beta > 0.0 {
        rng.random_range(1..=4)
    } else {
        rng.random_range(0..=4)
    };
    let x_sample = Array2::from_shape_fn((n_sample, d_in), |_| f64::standard_normal(&mut rng));
    let pair = rng.random_range(0..k);
    let eps = Array1::from_shape_fn(embed_dim, |_| 0.1 * f64::standard_normal(&mut rng));
    GradCase {
        config,
        x_obs,
        y_obs,
        x_sample,
        pair,
        eps,
        seed: 500 + case_index,
    }
}

fn loss_value(model: &GpnModel<f64>, case: &GradCase) -> f64 {
    gpn_loss(model, &case.x_obs, &case.y_obs, &case.x_sample, case.pair, &case.eps)
        .expect("loss")
        .terms
        .total
}

#[test]
fn c7_gradients_match_finite_differences() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_case = 0usize;
    for case_index in 0..100u64 {
        let case = random_grad_case(case_index);
        let model = init_gpn::<f64>(&case.config, case.seed).expect("init");
        let grad = gpn_loss(
            &model,
            &case.x_obs,
            &case.y_obs,
            &case.x_sample,
            case.pair,
            &case.eps,
        )
        .expect("grad");

        let rebuild = |phi_vals: Array1<f64>, embeddings: Vec<Array1<f64>>| {
            GpnModel::from_parts(
                case.config.clone(),
                gpnkit_core::nn::ParamVector::from_values(
                    case.config.generator_arch.clone(),
                    phi_vals,
                )
                .expect("phi"),
                embeddings,
                model.bootstraps().to_vec(),
            )
            .expect("model")
        };

        let mut case_worst = 0.0f64;
        for i in 0..model.phi().len() {
            let mut plus = model.phi().values().clone();
            plus[i] += h;
            let mut minus = model.phi().values().clone();
            minus[i] -= h;
            let f_plus = loss_value(&rebuild(plus, model.embeddings().to_vec()), &case);
            let f_minus = loss_value(&rebuild(minus, model.embeddings().to_vec()), &case);
            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = grad.phi_grad.values()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            case_worst = case_worst.max(rel);
        }
        for d in 0..case.config.embed_dim {
            let perturb = |delta: f64| {
                let mut embeddings = model.embeddings().to_vec();
                embeddings[case.pair][d] += delta;
                loss_value(&rebuild(model.phi().values().clone(), embeddings), &case)
            };
            let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
            let an = grad.z_grad[d];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            case_worst = case_worst.max(rel);
        }
        if case_worst > worst {
            worst = case_worst;
            worst_case = case_index as usize;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "100 random configurations, every generator and embedding coordinate: worst relative \
         error {worst:.2e} (limit 1e-4, case {worst_case}), {:.1}s (limit 60s)",
        secs(elapsed)
    );
    assert!(verdict("C7 gradient checks", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Criterion 8: metric conventions.
// ---------------------------------------------------------------------------

#[test]
fn c8_metric_conventions() {
    // Uniform 10-class predictions carry exactly ln 10 nats of entropy.
    let uniform = PosteriorSampleSet::new(
        Array3::from_elem((5, 7, 10), 0.1),
        SampleKind::ClassProbabilities,
    )
    .expect("uniform set");
    let entropy = mean_entropy(&uniform).expect("entropy");
    let entropy_ok = (entropy - 10.0f64.ln()).abs() < 1e-4;

    // Swapping the in/out score lists must complement the AUC bit-exactly,
    // ties included.
    let mut antisym_ok = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + seed);
        let quantized = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..37).map(|_| rng.random_range(0..8) as f64 * 0.25).collect()
        };
        let a = quantized(&mut rng);
        let b = quantized(&mut rng);
        let ab = ood_auc(&a, &b).expect("auc").auc;
        let ba = ood_auc(&b, &a).expect("auc").auc;
        if ab + ba != 1.0 {
            antisym_ok = false;
        }
    }

    // Interval convention: integer draws 0..=100 at level 0.95 give exactly
    // [2.5, 97.5] and cover a target of 50.
    let draws = Array3::from_shape_fn((101, 1, 1), |(i, _, _)| i as f64);
    let set = PosteriorSampleSet::new(draws, SampleKind::RegressionValues).expect("set");
    let report = confidence_intervals(&set, &ndarray::array![[50.0]], 0.95).expect("ci");
    let interval_ok =
        report.lower[(0, 0)] == 2.5 && report.upper[(0, 0)] == 97.5 && report.ci_correct == 1.0;

    let pass = entropy_ok && antisym_ok && interval_ok;
    let detail = format!(
        "uniform 10-class entropy {entropy:.6} vs ln 10 = {:.6} (tol 1e-4); AUC antisymmetry \
         bit-exact over 5 seeded score sets: {antisym_ok}; integer-draw interval [{}, {}] \
         (expected [2.5, 97.5]), target covered: {}",
        10.0f64.ln(),
        report.lower[(0, 0)],
        report.upper[(0, 0)],
        report.ci_correct == 1.0
    );
    assert!(verdict("C8 metric conventions", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Classification smoke test: posterior variance separates a far cluster.
// ---------------------------------------------------------------------------

fn cluster(center: (f64, f64), n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |(_, j)| {
        let c = if j == 0 { center.0 } else { center.1 };
        c + 0.35 * f64::standard_normal(rng)
    })
}

#[test]
fn classification_smoke_far_cluster_detection() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let x_train = concatenate(
        Axis(0),
        &[
            cluster((-1.5, 0.0), 40, &mut rng).view(),
            cluster((1.5, 0.0), 40, &mut rng).view(),
        ],
    )
    .expect("train x");
    let labels: Vec<usize> = (0..80).map(|i| usize::from(i >= 40)).collect();
    let train = LabeledDataset::from_labels(x_train, &labels, 2).expect("train");

    // Unlabeled pool mixes the training region with the far region
    // half-and-half; the far points themselves stay unlabeled.
    let far_pool = LabeledDataset::new(cluster((6.0, 6.0), 80, &mut rng), Array2::zeros((80, 1)))
        .expect("far pool");
    let pool = UnlabeledPool::mixture(&[&train, &far_pool]).expect("pool");

    let embed_dim = 2;
    let config = GpnConfig {
        k: 16,
        embed_dim,
        beta: 0.3,
        noise_scale: 0.1,
        bootstrap_arch: MlpArchitecture::new(
            vec![2, 16, 2],
            Activation::Tanh,
            OutputKind::Identity,
        )
        .expect("bootstrap arch"),
        bootstrap_prior: PriorSpec::new(vec![2.0, 2.0], vec![0.5, 0.5], WeightScaling::FanIn)
            .expect("prior"),
        generator_arch: MlpArchitecture::new(
            vec![2 + embed_dim, 32, 32, 2],
            Activation::Tanh,
            OutputKind::Identity,
        )
        .expect("generator arch"),
        sigma_eps: 0.25,
        kl_weight: 1.0,
        task: Task::Classification,
        pair_schedule: PairSchedule::Uniform,
        noise_mode: NoiseMode::PerStep,
    };
    let settings = GpnTrainSettings {
        epochs: 2500,
        labeled_batch: None,
        unlabeled_batch: 32,
        optimizer: Optimizer::adam(3e-3),
    };
    let model = init_gpn::<f64>(&config, 601).expect("init");
    let gpn = train_gpn(&model, &train, &pool, &settings, 602).expect("train");

    let x_in = concatenate(
        Axis(0),
        &[
            cluster((-1.5, 0.0), 30, &mut rng).view(),
            cluster((1.5, 0.0), 30, &mut rng).view(),
        ],
    )
    .expect("in x");
    let x_far = cluster((6.0, 6.0), 60, &mut rng);
    let x_eval = concatenate(Axis(0), &[x_in.view(), x_far.view()]).expect("eval x");
    let samples = sample_posterior(&gpn, &x_eval, 100, 603).expect("samples");
    assert_eq!(samples.kind(), SampleKind::ClassProbabilities);
    let scores = variance_score(&samples).expect("scores");
    let auc = ood_auc(
        &scores.as_slice().unwrap()[..60],
        &scores.as_slice().unwrap()[60..],
    )
    .expect("auc")
    .auc;

    let elapsed = start.elapsed();
    let pass = auc >= 0.9 && elapsed < Duration::from_secs(5 * 60);
    let detail = format!(
        "probability-variance AUC {auc:.3} separating the far cluster (floor 0.9), {:.0}s \
         (limit 300s)",
        secs(elapsed)
    );
    assert!(
        verdict("C10 classification smoke", pass, &detail),
        "{detail}"
    );
}
