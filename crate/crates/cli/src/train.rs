//! `train`: fits the configured model and writes checkpoint, training-loss
//! CSV, and manifest under `--out`.
//!
//! Regularizer-weight selection: `beta = "grid"` trains one candidate per
//! grid value on 90% of the labeled rows (candidate seeds offset from the
//! training seed) and scores each on the held-out 10%. Regression scores
//! by mean squared error, ties broken by interval calibration;
//! classification scores by accuracy, ties broken by mean uncertainty on
//! pool draws. The winning beta then trains the final model from scratch
//! on all labeled rows with the configured seeds, so a manifest carrying
//! the resolved beta reproduces the checkpoint bit for bit.

use gpnkit_core::data::{validation_split, LabeledDataset, UnlabeledPool};
use gpnkit_core::ensemble::{
    ensemble_predict, pr_member_loss, train_single_member, EnsembleConfig, EnsembleModel,
    TrainSettings,
};
use gpnkit_core::gpn::{
    init_gpn, sample_posterior, train_gpn_observed, GpnConfig, GpnModel, GpnTrainSettings, Task,
};
use gpnkit_core::metrics::{confidence_intervals, ood_auc, variance_score, PosteriorSampleSet};
use gpnkit_core::nn::{Activation, MlpArchitecture, OutputKind, ParamVector};
use gpnkit_core::prior::{PriorSpec, WeightScaling};
use rand::SeedableRng;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::checkpoint;
use crate::config::{BetaSetting, ModelKind, RunConfig, VALIDATION_FRACTION};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, ManifestMeta};
use crate::task::{build_task, TaskData};

/// Maximum rows kept in the training-loss CSV; longer runs are thinned.
const LOSS_CSV_ROWS: usize = 2000;

pub fn core_task(task: &TaskData) -> Task {
    if task.n_outputs > 1 {
        Task::Classification
    } else {
        Task::Regression
    }
}

fn activation(name: &str) -> Activation {
    Activation::from_name(name).expect("validated earlier")
}

fn arch(widths: Vec<usize>, act: Activation) -> CliResult<MlpArchitecture> {
    Ok(MlpArchitecture::new(widths, act, OutputKind::Identity)?)
}

/// Assembles the core GPN configuration for a task, with `beta` resolved.
pub fn build_gpn_config(cfg: &RunConfig, task: &TaskData, beta: f64) -> CliResult<GpnConfig> {
    let g = &cfg.model.gpn;
    let mut boot_widths = vec![task.n_features];
    boot_widths.extend(&g.bootstrap.hidden);
    boot_widths.push(task.n_outputs);
    let mut gen_widths = vec![task.n_features + g.embed_dim];
    gen_widths.extend(&g.generator.hidden);
    gen_widths.push(task.n_outputs);
    let config = GpnConfig {
        k: g.k,
        embed_dim: g.embed_dim,
        beta,
        noise_scale: g.noise_scale,
        bootstrap_arch: arch(boot_widths, activation(&g.bootstrap.activation))?,
        bootstrap_prior: PriorSpec::new(
            g.bootstrap.weight_variances.clone(),
            g.bootstrap.bias_variances.clone(),
            WeightScaling::from_name(&g.bootstrap.scaling)?,
        )?,
        generator_arch: arch(gen_widths, activation(&g.generator.activation))?,
        sigma_eps: g.sigma_eps,
        kl_weight: g.kl_weight,
        task: core_task(task),
        pair_schedule: checkpoint::pair_schedule_from_name(&g.pair_schedule)?,
        noise_mode: gpnkit_core::gpn::NoiseMode::PerStep,
    };
    config.validate()?;
    Ok(config)
}

pub fn build_ensemble_config(cfg: &RunConfig, task: &TaskData) -> CliResult<EnsembleConfig> {
    let e = &cfg.model.ensemble;
    let mut widths = vec![task.n_features];
    widths.extend(&e.hidden);
    widths.push(task.n_outputs);
    let config = EnsembleConfig {
        arch: arch(widths, activation(&e.activation))?,
        prior: PriorSpec::new(
            e.weight_variances.clone(),
            e.bias_variances.clone(),
            WeightScaling::from_name(&e.scaling)?,
        )?,
        regularization: checkpoint::regularization_from_name(&e.regularization)?,
        noise_std: e.noise_std,
        beta: e.beta,
        n_members: e.n_members,
        anchor_arch: None,
        anchor_prior: None,
    };
    config.validate()?;
    Ok(config)
}

fn gpn_settings(cfg: &RunConfig) -> GpnTrainSettings<f64> {
    GpnTrainSettings {
        epochs: cfg.train.epochs,
        labeled_batch: cfg.train.labeled_batch,
        unlabeled_batch: cfg.train.unlabeled_batch,
        optimizer: cfg.train.optimizer(),
    }
}

/// Per-point uncertainty used for detection: summed predictive variance.
pub fn uncertainty_scores(set: &PosteriorSampleSet<f64>) -> CliResult<Vec<f64>> {
    Ok(variance_score(set)?.to_vec())
}

struct BetaCandidate {
    beta: f64,
    primary: f64,
    secondary: f64,
    chosen: bool,
}

/// Trains one candidate per grid value and scores it on a seeded held-out
/// split. Returns the winning beta and the per-candidate table.
fn select_beta(
    cfg: &RunConfig,
    task: &TaskData,
) -> CliResult<(f64, Vec<BetaCandidate>)> {
    let split_seed = cfg.train.train_seed.wrapping_add(500);
    let (fit, val) = validation_split(&task.train, VALIDATION_FRACTION, split_seed)?;
    if val.n_rows() == 0 || fit.n_rows() == 0 {
        return Err(CliError::data(
            "beta grid selection needs enough labeled rows for a held-out split",
        ));
    }
    let settings = gpn_settings(cfg);
    let classification = core_task(task) == Task::Classification;
    let mut rows = Vec::new();
    for (i, &beta) in cfg.model.gpn.beta_grid.iter().enumerate() {
        let config = build_gpn_config(cfg, task, beta)?;
        let model = init_gpn::<f64>(&config, cfg.train.init_seed)?;
        let candidate_seed = cfg.train.train_seed.wrapping_add(1000 + i as u64);
        let trained = gpnkit_core::gpn::train_gpn(&model, &fit, &task.pool, &settings, candidate_seed)?;
        let eval_seed = cfg.train.train_seed.wrapping_add(2000 + i as u64);
        let samples = sample_posterior(&trained, val.x(), cfg.eval.n_samples, eval_seed)?;
        let (primary, secondary) = if classification {
            // Primary: 1 - accuracy (lower is better). Secondary: negated
            // mean pool uncertainty, so more OOD-aware candidates win ties.
            let mean = samples.mean_prediction();
            let mut correct = 0usize;
            for r in 0..val.n_rows() {
                let pred = argmax_row(&mean, r);
                let truth = argmax_row(val.y(), r);
                if pred == truth {
                    correct += 1;
                }
            }
            let acc = correct as f64 / val.n_rows() as f64;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(eval_seed ^ 0x5eed);
            let pool_x = task.pool.draw(&mut rng, 64);
            let pool_samples = sample_posterior(&trained, &pool_x, cfg.eval.n_samples, eval_seed)?;
            let pool_unc = mean_of(&uncertainty_scores(&pool_samples)?);
            (1.0 - acc, -pool_unc)
        } else {
            let mean = samples.mean_prediction();
            let mse = (&mean - val.y()).mapv(|d| d * d).mean().unwrap_or(f64::NAN);
            let ci = confidence_intervals(&samples, val.y(), cfg.eval.level)?;
            (mse, (ci.ci_correct - cfg.eval.level).abs())
        };
        if !primary.is_finite() {
            return Err(CliError::Numeric(format!(
                "beta = {beta} candidate diverged during grid selection"
            )));
        }
        rows.push(BetaCandidate {
            beta,
            primary,
            secondary,
            chosen: false,
        });
    }
    // Lexicographic with slack: candidates within 5% of the best primary
    // score are tied and the secondary criterion decides.
    let best_primary = rows
        .iter()
        .map(|r| r.primary)
        .fold(f64::INFINITY, f64::min);
    let slack = best_primary.abs() * 0.05 + 1e-12;
    let mut best_idx = 0;
    let mut best_secondary = f64::INFINITY;
    for (i, r) in rows.iter().enumerate() {
        if r.primary <= best_primary + slack && r.secondary < best_secondary {
            best_secondary = r.secondary;
            best_idx = i;
        }
    }
    rows[best_idx].chosen = true;
    Ok((rows[best_idx].beta, rows))
}

fn argmax_row(a: &ndarray::Array2<f64>, row: usize) -> usize {
    let mut best = 0;
    for c in 1..a.ncols() {
        if a[(row, c)] > a[(row, best)] {
            best = c;
        }
    }
    best
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

fn check_finite_gpn(model: &GpnModel<f64>) -> CliResult<()> {
    let ok = model.phi().values().iter().all(|v| v.is_finite())
        && model
            .embeddings()
            .iter()
            .all(|z| z.iter().all(|v| v.is_finite()));
    if ok {
        Ok(())
    } else {
        Err(CliError::Numeric(
            "training diverged: non-finite generator parameters".into(),
        ))
    }
}

/// Detection AUC of a sample-set pair over the task's test splits, when
/// both splits exist.
fn test_split_auc(
    task: &TaskData,
    mut predict: impl FnMut(&LabeledDataset<f64>) -> CliResult<PosteriorSampleSet<f64>>,
) -> CliResult<Option<f64>> {
    let (Some(test_in), Some(test_ood)) = (&task.test_in, &task.test_ood) else {
        return Ok(None);
    };
    let in_scores = uncertainty_scores(&predict(test_in)?)?;
    let ood_scores = uncertainty_scores(&predict(test_ood)?)?;
    Ok(Some(ood_auc(&in_scores, &ood_scores)?.auc))
}

pub fn run(
    cfg: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
    threads: usize,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)?;
    let task = build_task(&cfg.task)?;
    let mut meta = ManifestMeta::new("train");
    meta.input("config", config_path)?;
    meta.dataset = Some(task.record.clone());

    let checkpoint_dir = out_dir.join("checkpoint");
    let mut resolved = cfg.clone();

    match cfg.model.kind {
        ModelKind::Gpn => {
            let (beta, grid_rows) = match cfg.model.gpn.beta.fixed() {
                Some(b) => (b, Vec::new()),
                None => select_beta(cfg, &task)?,
            };
            if !grid_rows.is_empty() {
                let rows: Vec<String> = grid_rows
                    .iter()
                    .map(|r| {
                        format!(
                            "{},{},{},{}",
                            r.beta, r.primary, r.secondary, r.chosen as u8
                        )
                    })
                    .collect();
                let path = out_dir.join("beta_grid.csv");
                write_csv(&path, "beta,primary_score,secondary_score,chosen", &rows)?;
                meta.artifact("beta_grid.csv", &path)?;
            }
            resolved.model.gpn.beta = BetaSetting::Fixed(beta);
            meta.note("beta_resolved", beta);

            let config = build_gpn_config(cfg, &task, beta)?;
            let settings = gpn_settings(cfg);
            let model = init_gpn::<f64>(&config, cfg.train.init_seed)?;

            let steps_per_epoch = match settings.labeled_batch {
                Some(b) if task.train.n_rows() > 0 => task.train.n_rows().div_ceil(b.max(1)),
                _ => 1,
            };
            let total_steps = settings.epochs.saturating_mul(steps_per_epoch);
            let stride = (total_steps / LOSS_CSV_ROWS).max(1);
            let mut loss_rows: Vec<String> = Vec::new();
            let t0 = Instant::now();
            let trained = train_gpn_observed(
                &model,
                &task.train,
                &task.pool,
                &settings,
                cfg.train.train_seed,
                &mut |info| {
                    if info.step % stride == 0 || info.step + 1 == total_steps {
                        loss_rows.push(format!(
                            "{},{},{},{},{}",
                            info.step,
                            info.terms.total,
                            info.terms.data,
                            info.terms.anchor_gap,
                            info.terms.kl
                        ));
                    }
                },
            )?;
            let train_seconds = t0.elapsed().as_secs_f64();
            check_finite_gpn(&trained)?;

            let loss_path = out_dir.join("loss.csv");
            write_csv(&loss_path, "step,total,data,anchor_gap,kl", &loss_rows)?;
            meta.artifact("loss.csv", &loss_path)?;
            checkpoint::save_gpn(&checkpoint_dir, &trained)?;
            meta.artifact_dir("checkpoint", &checkpoint_dir)?;
            meta.note("train_seconds", format!("{train_seconds:.3}"));
            meta.note("epochs", settings.epochs);

            // Detection point for the scaling figure, when the task has
            // test splits to score against.
            let auc = test_split_auc(&task, |ds| {
                Ok(sample_posterior(
                    &trained,
                    ds.x(),
                    cfg.eval.n_samples,
                    cfg.eval.seed,
                )?)
            })?;
            if let Some(auc) = auc {
                let path = out_dir.join("gpn_point.csv");
                write_csv(
                    &path,
                    "seconds,ood_auc",
                    &[format!("{train_seconds:.6},{auc}")],
                )?;
                meta.artifact("gpn_point.csv", &path)?;
            }
        }
        ModelKind::Ensemble => {
            let config = build_ensemble_config(cfg, &task)?;
            let settings = TrainSettings {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.labeled_batch,
                optimizer: cfg.train.optimizer(),
                unlabeled_batch: cfg.train.unlabeled_batch,
            };
            let (model, durations) = train_members_parallel(
                &config,
                &task.train,
                Some(&task.pool),
                &settings,
                cfg.train.train_seed,
                threads.max(1),
            )?;
            let total_seconds: f64 = durations.iter().sum();
            for member in model.members() {
                if member.values().iter().any(|v| !v.is_finite()) {
                    return Err(CliError::Numeric(
                        "training diverged: non-finite member parameters".into(),
                    ));
                }
            }

            // Final PR loss per member over the full labeled set.
            let mut loss_rows = Vec::new();
            for (i, (member, anchor)) in
                model.members().iter().zip(model.anchors()).enumerate()
            {
                let loss = pr_member_loss(
                    member,
                    anchor,
                    task.train.x(),
                    task.train.y(),
                    config.noise_std,
                    &config.prior,
                )?;
                loss_rows.push(format!("{i},{loss}"));
            }
            let loss_path = out_dir.join("loss.csv");
            write_csv(&loss_path, "member,final_loss", &loss_rows)?;
            meta.artifact("loss.csv", &loss_path)?;

            // Cumulative detection-vs-time curve: AUC of the first m
            // members against the summed training time of those members.
            if task.test_in.is_some() && task.test_ood.is_some() {
                let mut rows = Vec::new();
                for m in 2..=config.n_members {
                    let sub = EnsembleModel::from_parts(
                        EnsembleConfig {
                            n_members: m,
                            ..config.clone()
                        },
                        model.members()[..m].to_vec(),
                        model.anchors()[..m].to_vec(),
                    )?;
                    let auc = test_split_auc(&task, |ds| Ok(ensemble_predict(&sub, ds.x())?))?
                        .expect("splits checked above");
                    let cumulative: f64 = durations[..m].iter().sum();
                    rows.push(format!("{m},{cumulative:.6},{auc}"));
                }
                let path = out_dir.join("scaling.csv");
                write_csv(&path, "members,cumulative_seconds,ood_auc", &rows)?;
                meta.artifact("scaling.csv", &path)?;
            }

            checkpoint::save_ensemble(&checkpoint_dir, &model)?;
            meta.artifact_dir("checkpoint", &checkpoint_dir)?;
            meta.note("train_seconds", format!("{total_seconds:.3}"));
            meta.note("epochs", settings.epochs);
            meta.note("threads", threads.max(1));
        }
    }

    // The manifest doubles as an eval config for the new checkpoint.
    let checkpoint_abs = checkpoint_dir
        .canonicalize()
        .unwrap_or_else(|_| checkpoint_dir.clone());
    resolved.eval.checkpoint = Some(checkpoint_abs);
    let manifest_path = write_manifest(out_dir, &resolved, &meta)?;
    println!("train: wrote {}", manifest_path.display());
    Ok(())
}

type MemberPair = (ParamVector<f64>, ParamVector<f64>);

/// Trains ensemble members across worker threads. Each member has its own
/// seeded RNG stream, so the result is identical for any thread count;
/// only wall-clock changes. Durations are per member, in index order.
fn train_members_parallel(
    config: &EnsembleConfig,
    labeled: &LabeledDataset<f64>,
    unlabeled: Option<&UnlabeledPool<f64>>,
    settings: &TrainSettings<f64>,
    seed: u64,
    threads: usize,
) -> CliResult<(EnsembleModel<f64>, Vec<f64>)> {
    let m = config.n_members;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(MemberPair, f64)>>> = Mutex::new(vec![None; m]);
    let first_error: Mutex<Option<gpnkit_core::Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(m) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= m {
                    break;
                }
                let t0 = Instant::now();
                match train_single_member(config, labeled, unlabeled, settings, seed, index) {
                    Ok(pair) => {
                        let elapsed = t0.elapsed().as_secs_f64();
                        slots.lock().unwrap()[index] = Some((pair, elapsed));
                    }
                    Err(e) => {
                        let mut guard = first_error.lock().unwrap();
                        if guard.is_none() {
                            *guard = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e.into());
    }
    let mut members = Vec::with_capacity(m);
    let mut anchors = Vec::with_capacity(m);
    let mut durations = Vec::with_capacity(m);
    for slot in slots.into_inner().unwrap() {
        let ((member, anchor), secs) =
            slot.ok_or_else(|| CliError::Numeric("a member failed to train".into()))?;
        members.push(member);
        anchors.push(anchor);
        durations.push(secs);
    }
    let model = EnsembleModel::from_parts(config.clone(), members, anchors)?;
    Ok((model, durations))
}

/// Re-exported for tests: absolute checkpoint path a train run will use.
pub fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint")
}
