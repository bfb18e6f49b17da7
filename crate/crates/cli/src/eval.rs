//! `eval`: loads a checkpoint, draws posterior samples over the task's
//! test splits, and writes metrics.csv, roc.csv, predictions.csv, and a
//! manifest.
//!
//! GPN checkpoints are sampled `eval.n_samples` times with the eval seed;
//! ensembles report one draw per member, since an ensemble can only
//! produce as many functions as it has members. The metrics CSV records
//! the draw count actually used. All outputs are deterministic for a
//! fixed seed, so running eval twice produces byte-identical files.

use gpnkit_core::ensemble::ensemble_predict;
use gpnkit_core::gpn::sample_posterior;
use gpnkit_core::metrics::{
    confidence_intervals, mean_entropy, ood_auc, OodReport, PosteriorSampleSet, SampleKind,
};
use gpnkit_core::data::LabeledDataset;
use ndarray::Array2;
use std::io::Write as _;
use std::path::Path;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, ManifestMeta};
use crate::task::{build_task, TaskData};
use crate::train::uncertainty_scores;

fn model_dims(ckpt: &Checkpoint) -> (usize, usize, &'static str) {
    match ckpt {
        Checkpoint::Gpn(m) => (
            m.config().data_dim(),
            m.config().output_dim(),
            m.config().task.name(),
        ),
        Checkpoint::Ensemble(m) => (
            m.config().arch.input_dim(),
            m.config().arch.output_dim(),
            "regression",
        ),
    }
}

/// Confirms the checkpoint can evaluate this task at all: feature and
/// output widths must match, and the model family must agree with the
/// configured one.
fn check_compatibility(cfg: &RunConfig, ckpt: &Checkpoint, task: &TaskData) -> CliResult<()> {
    let expected_kind = match cfg.model.kind {
        ModelKind::Gpn => "gpn",
        ModelKind::Ensemble => "ensemble",
    };
    if ckpt.kind() != expected_kind {
        return Err(CliError::config(format!(
            "checkpoint is a {} model but the config says model.kind = \"{expected_kind}\"",
            ckpt.kind()
        )));
    }
    let (in_dim, out_dim, model_task) = model_dims(ckpt);
    if in_dim != task.n_features || out_dim != task.n_outputs {
        return Err(CliError::config(format!(
            "checkpoint expects {in_dim} features -> {out_dim} outputs, task provides {} -> {}",
            task.n_features, task.n_outputs
        )));
    }
    let task_kind = if task.n_outputs > 1 {
        "classification"
    } else {
        "regression"
    };
    if model_task != task_kind {
        return Err(CliError::config(format!(
            "checkpoint was trained for {model_task}, task is {task_kind}"
        )));
    }
    Ok(())
}

struct Sampler<'a> {
    ckpt: &'a Checkpoint,
    n_samples: usize,
    seed: u64,
}

impl Sampler<'_> {
    fn draw(&self, x: &Array2<f64>) -> CliResult<PosteriorSampleSet<f64>> {
        match self.ckpt {
            Checkpoint::Gpn(m) => Ok(sample_posterior(m, x, self.n_samples, self.seed)?),
            Checkpoint::Ensemble(m) => Ok(ensemble_predict(m, x)?),
        }
    }

    /// Draws actually taken per input point.
    fn effective_draws(&self) -> usize {
        match self.ckpt {
            Checkpoint::Gpn(_) => self.n_samples,
            Checkpoint::Ensemble(m) => m.n_members(),
        }
    }
}

fn push_metric(rows: &mut Vec<String>, name: &str, value: f64) {
    rows.push(format!("{name},{value}"));
}

fn accuracy(samples: &PosteriorSampleSet<f64>, y: &Array2<f64>) -> f64 {
    let mean = samples.mean_prediction();
    let n = y.nrows();
    let mut correct = 0usize;
    for r in 0..n {
        let pred = (0..mean.ncols()).max_by(|&a, &b| {
            mean[(r, a)].partial_cmp(&mean[(r, b)]).unwrap_or(std::cmp::Ordering::Equal)
        });
        let truth = (0..y.ncols()).max_by(|&a, &b| {
            y[(r, a)].partial_cmp(&y[(r, b)]).unwrap_or(std::cmp::Ordering::Equal)
        });
        if pred == truth {
            correct += 1;
        }
    }
    correct as f64 / n.max(1) as f64
}

fn write_roc(path: &Path, report: &OodReport) -> CliResult<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "fpr,tpr")?;
    for (fpr, tpr) in &report.roc_points {
        writeln!(out, "{fpr},{tpr}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn run(
    cfg: &RunConfig,
    config_path: &Path,
    checkpoint_override: Option<&Path>,
    out_dir: &Path,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt_dir = checkpoint_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.checkpoint.clone())
        .ok_or_else(|| {
            CliError::config("no checkpoint: pass one as an argument or set eval.checkpoint")
        })?;
    if cfg.eval.n_samples == 0 {
        return Err(CliError::data("empty sample set: eval.n_samples is 0"));
    }
    let ckpt = checkpoint::load(&ckpt_dir)?;
    let task = build_task(&cfg.task)?;
    check_compatibility(cfg, &ckpt, &task)?;

    let sampler = Sampler {
        ckpt: &ckpt,
        n_samples: cfg.eval.n_samples,
        seed: cfg.eval.seed,
    };

    let mut meta = ManifestMeta::new("eval");
    meta.input("config", config_path)?;
    let mut hashes = ManifestMeta::new("");
    hashes.artifact_dir("checkpoint", &ckpt_dir)?;
    for (name, sha) in hashes.artifacts {
        meta.inputs.insert(name, sha);
    }
    meta.dataset = Some(task.record.clone());

    // In-distribution rows: the test split when the task has one, else
    // the labeled observations themselves (the small synthetic tasks).
    let eval_in: &LabeledDataset<f64> = task.test_in.as_ref().unwrap_or(&task.train);
    let in_samples = sampler.draw(eval_in.x())?;
    let classification = in_samples.kind() == SampleKind::ClassProbabilities;

    let mut metric_rows: Vec<String> = Vec::new();
    push_metric(&mut metric_rows, "n_samples", sampler.effective_draws() as f64);

    let mut prediction_rows: Vec<String> = Vec::new();
    let mut ci_in = None;
    if classification {
        let acc = accuracy(&in_samples, eval_in.y());
        push_metric(&mut metric_rows, "in_dist_loss", 1.0 - acc);
        push_metric(&mut metric_rows, "in_accuracy", acc);
        push_metric(&mut metric_rows, "mean_entropy_in", mean_entropy(&in_samples)?);
    } else {
        let mean = in_samples.mean_prediction();
        let mse = (&mean - eval_in.y()).mapv(|d| d * d).mean().unwrap_or(f64::NAN);
        push_metric(&mut metric_rows, "in_dist_loss", mse);
        let ci = confidence_intervals(&in_samples, eval_in.y(), cfg.eval.level)?;
        push_metric(&mut metric_rows, "in_ci_width", ci.mean_width);
        push_metric(&mut metric_rows, "in_ci_correct", ci.ci_correct);
        ci_in = Some(ci);
    }

    // Per-point predictions for the in-distribution rows.
    {
        let mean = in_samples.mean_prediction();
        let std = in_samples.predictive_std()?;
        if classification {
            prediction_rows.push("split,row,label,predicted,max_prob,uncertainty".into());
            let unc = uncertainty_scores(&in_samples)?;
            for r in 0..eval_in.n_rows() {
                let label = (0..eval_in.y().ncols())
                    .max_by(|&a, &b| {
                        eval_in.y()[(r, a)]
                            .partial_cmp(&eval_in.y()[(r, b)])
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                let pred = (0..mean.ncols())
                    .max_by(|&a, &b| {
                        mean[(r, a)].partial_cmp(&mean[(r, b)]).unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                prediction_rows.push(format!(
                    "in,{r},{label},{pred},{},{}",
                    mean[(r, pred)], unc[r]
                ));
            }
        } else {
            prediction_rows.push("split,row,y,mean,std,lower,upper".into());
            let ci = ci_in.as_ref().expect("regression path sets ci_in");
            for r in 0..eval_in.n_rows() {
                prediction_rows.push(format!(
                    "in,{r},{},{},{},{},{}",
                    eval_in.y()[(r, 0)],
                    mean[(r, 0)],
                    std[r],
                    ci.lower[(r, 0)],
                    ci.upper[(r, 0)]
                ));
            }
        }
    }

    if let Some(test_ood) = &task.test_ood {
        let ood_samples = sampler.draw(test_ood.x())?;
        if classification {
            push_metric(
                &mut metric_rows,
                "mean_entropy_ood",
                mean_entropy(&ood_samples)?,
            );
        } else {
            // OOD rows carry real targets for the tabular tasks, so
            // interval correctness out of distribution is measurable.
            let ci = confidence_intervals(&ood_samples, test_ood.y(), cfg.eval.level)?;
            push_metric(&mut metric_rows, "ood_ci_correct", ci.ci_correct);
            push_metric(&mut metric_rows, "ood_ci_width", ci.mean_width);
            let mean = ood_samples.mean_prediction();
            let std = ood_samples.predictive_std()?;
            for r in 0..test_ood.n_rows() {
                prediction_rows.push(format!(
                    "ood,{r},{},{},{},{},{}",
                    test_ood.y()[(r, 0)],
                    mean[(r, 0)],
                    std[r],
                    ci.lower[(r, 0)],
                    ci.upper[(r, 0)]
                ));
            }
        }
        let in_scores = uncertainty_scores(&in_samples)?;
        let ood_scores = uncertainty_scores(&ood_samples)?;
        let report = ood_auc(&in_scores, &ood_scores)?;
        push_metric(&mut metric_rows, "ood_auc", report.auc);
        let roc_path = out_dir.join("roc.csv");
        write_roc(&roc_path, &report)?;
        meta.artifact("roc.csv", &roc_path)?;
    }

    let metrics_path = out_dir.join("metrics.csv");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
        writeln!(out, "metric,value")?;
        for row in &metric_rows {
            writeln!(out, "{row}")?;
        }
        out.flush()?;
    }
    meta.artifact("metrics.csv", &metrics_path)?;

    let predictions_path = out_dir.join("predictions.csv");
    std::fs::write(&predictions_path, prediction_rows.join("\n") + "\n")?;
    meta.artifact("predictions.csv", &predictions_path)?;

    let mut resolved = cfg.clone();
    resolved.eval.checkpoint = Some(
        ckpt_dir
            .canonicalize()
            .unwrap_or_else(|_| ckpt_dir.clone()),
    );
    let manifest_path = write_manifest(out_dir, &resolved, &meta)?;
    println!("eval: wrote {}", manifest_path.display());
    Ok(())
}
