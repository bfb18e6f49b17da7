//! Dataset construction: turns a `[task]` section into train/test splits,
//! an unlabeled pool, and a manifest record of how the data was derived.
//!
//! Targets are standardized by labeled-train statistics for the tabular
//! tasks so one interval-width scale works across datasets; the recorded
//! stats allow mapping predictions back to raw units.

use gpnkit_core::data::{
    self, InSide, LabeledDataset, SplitSpec, UnlabeledPool,
};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::{TaskConfig, TaskKind};
use crate::error::{CliError, CliResult};

/// Everything a model command needs to know about the data.
pub struct TaskData {
    /// Labeled training rows (targets standardized for tabular tasks).
    pub train: LabeledDataset<f64>,
    /// In-distribution test rows; empty datasets are represented as `None`.
    pub test_in: Option<LabeledDataset<f64>>,
    /// Out-of-distribution test rows.
    pub test_ood: Option<LabeledDataset<f64>>,
    pub pool: UnlabeledPool<f64>,
    pub n_features: usize,
    pub n_outputs: usize,
    /// Input interval for 1-D band figures.
    pub x_range: Option<(f64, f64)>,
    /// Mean/std used to standardize targets, when they were.
    pub target_stats: Option<(f64, f64)>,
    pub record: DatasetRecord,
}

/// Manifest entry describing the dataset: enough to audit provenance and
/// reproduce the split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub kind: String,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_ood: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// SHA-256 of the source file, when the data came from disk.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Sine angular frequency, echoed so the manifest pins the target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_std: Option<f64>,
    /// Per-feature normalization summary (mean of means, mean of stds)
    /// rather than 81 columns of detail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_stats_summary: Option<String>,
}

fn nonempty(ds: LabeledDataset<f64>) -> Option<LabeledDataset<f64>> {
    (ds.n_rows() > 0).then_some(ds)
}

/// Standardizes scalar targets in place by the dataset's own mean/std
/// (ddof 1); returns the stats for later inversion.
fn standardize_targets(
    train: &mut LabeledDataset<f64>,
    others: &mut [&mut Option<LabeledDataset<f64>>],
) -> CliResult<(f64, f64)> {
    let targets = train.targets_scalar()?;
    let n = targets.len() as f64;
    if n < 2.0 {
        return Err(CliError::data(
            "target standardization needs at least two labeled rows",
        ));
    }
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(CliError::data("labeled targets have zero spread"));
    }
    let apply = |ds: &LabeledDataset<f64>| -> CliResult<LabeledDataset<f64>> {
        let y = ds.y().mapv(|t| (t - mean) / std);
        Ok(LabeledDataset::new(ds.x().clone(), y)?)
    };
    *train = apply(train)?;
    for slot in others {
        if let Some(ds) = slot.take() {
            **slot = Some(apply(&ds)?);
        }
    }
    Ok((mean, std))
}

fn feature_summary(ds: &LabeledDataset<f64>) -> Option<String> {
    ds.stats().map(|s| {
        let d = s.mean.len() as f64;
        let mean_of_means = s.mean.iter().sum::<f64>() / d;
        let mean_of_stds = s.std.iter().sum::<f64>() / d;
        format!(
            "z-scored {} features; mean(mean)={mean_of_means:.4}, mean(std)={mean_of_stds:.4}",
            s.mean.len()
        )
    })
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_task(cfg: &TaskConfig) -> CliResult<TaskData> {
    match cfg.kind {
        TaskKind::Sine => build_sine(cfg),
        TaskKind::Clusters => build_clusters(cfg),
        TaskKind::Superconductor => build_superconductor(cfg),
        TaskKind::Csv => build_csv(cfg),
    }
}

fn build_sine(cfg: &TaskConfig) -> CliResult<TaskData> {
    // The sine target is sin(omega x) with omega fixed at pi; the config
    // field exists so the manifest states the frequency explicitly.
    if (cfg.omega - std::f64::consts::PI).abs() > 1e-12 {
        return Err(CliError::config(format!(
            "task.omega is fixed at pi ({:.12}); got {}",
            std::f64::consts::PI,
            cfg.omega
        )));
    }
    let half = cfg.x_half_range;
    if !(half > 0.0) {
        return Err(CliError::config("task.x_half_range must be positive"));
    }
    let (train, pool) =
        data::make_sine_task::<f64>(cfg.n_obs, cfg.noise_std, (-half, half), cfg.seed)?;
    let record = DatasetRecord {
        kind: "sine".into(),
        n_train: train.n_rows(),
        n_test_in: 0,
        n_test_ood: 0,
        source: None,
        source_sha256: None,
        split: Some(format!(
            "observations stratified over [{:.3}, {:.3}] (inner 80%), seed {}",
            -half, half, cfg.seed
        )),
        omega: Some(cfg.omega),
        target_mean: None,
        target_std: None,
        feature_stats_summary: None,
    };
    Ok(TaskData {
        train,
        test_in: None,
        test_ood: None,
        pool,
        n_features: 1,
        n_outputs: 1,
        x_range: Some((-half, half)),
        target_stats: None,
        record,
    })
}

/// Two Gaussian clusters labeled 0/1, plus a far blob that is only ever
/// seen unlabeled and at evaluation time.
fn build_clusters(cfg: &TaskConfig) -> CliResult<TaskData> {
    use gpnkit_core::Scalar;
    use rand::SeedableRng;
    let n_per_class = cfg.n_obs.max(2);
    let n_far = n_per_class;
    let std = cfg.noise_std;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw_blob = |center: (f64, f64), n: usize| -> Array2<f64> {
        Array2::from_shape_fn((n, 2), |(_, j)| {
            let c = if j == 0 { center.0 } else { center.1 };
            c + std * f64::standard_normal(&mut rng)
        })
    };
    let a = draw_blob((-1.5, 0.0), n_per_class);
    let b = draw_blob((1.5, 0.0), n_per_class);
    let far = draw_blob((6.0, 6.0), n_far);

    let stack = |top: &Array2<f64>, bottom: &Array2<f64>| -> Array2<f64> {
        let mut x = Array2::zeros((top.nrows() + bottom.nrows(), 2));
        x.slice_mut(ndarray::s![..top.nrows(), ..]).assign(top);
        x.slice_mut(ndarray::s![top.nrows().., ..]).assign(bottom);
        x
    };
    let mut labels = vec![0usize; n_per_class];
    labels.extend(vec![1usize; n_per_class]);
    let train = LabeledDataset::from_labels(stack(&a, &b), &labels, 2)?;
    // Evaluation uses a fresh draw from the same mechanism.
    let a2 = draw_blob((-1.5, 0.0), n_per_class);
    let b2 = draw_blob((1.5, 0.0), n_per_class);
    let test_in = LabeledDataset::from_labels(stack(&a2, &b2), &labels, 2)?;
    let test_ood = LabeledDataset::new(far.clone(), Array2::zeros((n_far, 2)))?;
    let far_pool = LabeledDataset::new(far, Array2::zeros((n_far, 2)))?;
    let pool = UnlabeledPool::mixture(&[&train, &far_pool])?;

    let record = DatasetRecord {
        kind: "clusters".into(),
        n_train: train.n_rows(),
        n_test_in: test_in.n_rows(),
        n_test_ood: test_ood.n_rows(),
        source: None,
        source_sha256: None,
        split: Some(format!(
            "clusters at (+/-1.5, 0) std {std}, far blob at (6, 6), seed {}",
            cfg.seed
        )),
        omega: None,
        target_mean: None,
        target_std: None,
        feature_stats_summary: None,
    };
    Ok(TaskData {
        train,
        test_in: Some(test_in),
        test_ood: Some(test_ood),
        pool,
        n_features: 2,
        n_outputs: 2,
        x_range: None,
        target_stats: None,
        record,
    })
}

fn build_superconductor(cfg: &TaskConfig) -> CliResult<TaskData> {
    // An explicit task.path takes precedence over the environment variable
    // the loader reads; setting the variable for this process scope would
    // leak, so load the CSV directly in that case.
    let (full, source, source_sha256) = match &cfg.path {
        Some(path) => {
            let ds = data::load_csv::<f64>(path, "critical_temp", true)?;
            (
                ds,
                Some(path.display().to_string()),
                Some(sha256_file(path)?),
            )
        }
        None => {
            let from_env = std::env::var(data::SUPERCOND_CSV_ENV).ok().filter(|p| !p.is_empty());
            let ds = data::load_superconductor::<f64>(cfg.n_rows.max(1), cfg.seed)?;
            match from_env {
                Some(p) => {
                    let sha = sha256_file(Path::new(&p))?;
                    (ds, Some(p), Some(sha))
                }
                None => (
                    ds,
                    Some(format!("surrogate({} rows, seed {})", cfg.n_rows.max(1), cfg.seed)),
                    None,
                ),
            }
        }
    };

    // Row-random train/test folds, then a target threshold inside each
    // fold: labeled = train-fold rows at or above tau, pool = all
    // train-fold features, test fold divided into in/out alongside tau.
    let (train_fold, test_fold) = data::validation_split(&full, cfg.test_fraction, cfg.seed)?;
    let thresh = SplitSpec::TargetThreshold {
        tau: cfg.tau,
        in_side: InSide::Above,
    };
    let train_split = data::split_by_target(&train_fold, &thresh)?;
    let test_split = data::split_by_target(&test_fold, &thresh)?;
    let mut train = train_split.in_dist;
    if train.n_rows() < 2 {
        return Err(CliError::data(format!(
            "threshold tau = {} leaves {} labeled training rows",
            cfg.tau,
            train.n_rows()
        )));
    }
    let mut test_in = nonempty(test_split.in_dist);
    let mut test_ood = nonempty(test_split.ood);
    let pool = UnlabeledPool::from_dataset(&train_fold);
    let (t_mean, t_std) = standardize_targets(&mut train, &mut [&mut test_in, &mut test_ood])?;

    let record = DatasetRecord {
        kind: "superconductor".into(),
        n_train: train.n_rows(),
        n_test_in: test_in.as_ref().map_or(0, |d| d.n_rows()),
        n_test_ood: test_ood.as_ref().map_or(0, |d| d.n_rows()),
        source,
        source_sha256,
        split: Some(format!(
            "test fraction {} (seed {}), then target threshold tau = {} (labeled side: above)",
            cfg.test_fraction, cfg.seed, cfg.tau
        )),
        omega: None,
        target_mean: Some(t_mean),
        target_std: Some(t_std),
        feature_stats_summary: feature_summary(&full),
    };
    let n_features = train.n_features();
    Ok(TaskData {
        train,
        test_in,
        test_ood,
        pool,
        n_features,
        n_outputs: 1,
        x_range: None,
        target_stats: Some((t_mean, t_std)),
        record,
    })
}

fn build_csv(cfg: &TaskConfig) -> CliResult<TaskData> {
    let path = cfg.path.as_ref().expect("validated");
    let target = cfg.target_column.as_ref().expect("validated");
    let full = data::load_csv::<f64>(path, target, true)?;
    let (mut train, test) = data::validation_split(&full, cfg.test_fraction, cfg.seed)?;
    let mut test_in = nonempty(test);
    let pool = UnlabeledPool::from_dataset(&train);
    let (t_mean, t_std) = standardize_targets(&mut train, &mut [&mut test_in])?;
    let record = DatasetRecord {
        kind: "csv".into(),
        n_train: train.n_rows(),
        n_test_in: test_in.as_ref().map_or(0, |d| d.n_rows()),
        n_test_ood: 0,
        source: Some(path.display().to_string()),
        source_sha256: Some(sha256_file(path)?),
        split: Some(format!(
            "random test fraction {} with seed {}",
            cfg.test_fraction, cfg.seed
        )),
        omega: None,
        target_mean: Some(t_mean),
        target_std: Some(t_std),
        feature_stats_summary: feature_summary(&full),
    };
    let n_features = train.n_features();
    Ok(TaskData {
        train,
        test_in,
        test_ood: None,
        pool,
        n_features,
        n_outputs: 1,
        x_range: None,
        target_stats: Some((t_mean, t_std)),
        record,
    })
}

/// Evenly spaced 1-D grid used by figures and sine evaluation.
pub fn grid_1d(range: (f64, f64), n: usize) -> Array2<f64> {
    let (lo, hi) = range;
    let n = n.max(2);
    Array2::from_shape_fn((n, 1), |(i, _)| {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    })
}

/// True sine curve values for a grid, in the same units as the data.
pub fn sine_truth(x: &Array2<f64>) -> Array1<f64> {
    x.column(0).mapv(|v| (std::f64::consts::PI * v).sin())
}
