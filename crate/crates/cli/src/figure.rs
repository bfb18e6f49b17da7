//! `figure`: renders SVG plots from earlier artifacts, always with the
//! plotted numbers as CSV alongside.
//!
//! - `posterior_band`: samples a 1-D regression checkpoint on a grid and
//!   draws mean, 95% band, and the observations (needs `--config`).
//! - `roc`: replots an eval run's roc.csv.
//! - `scaling`: replots an ensemble train run's scaling.csv, with the
//!   GPN point overlaid when a gpn_point.csv is given.
//!
//! Missing input files and empty sample sets are data errors (exit 3).

use gpnkit_core::ensemble::ensemble_predict;
use gpnkit_core::gpn::sample_posterior;
use gpnkit_core::metrics::interval_bounds;
use std::path::Path;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{RunConfig, TaskKind};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, write_meta_only, ManifestMeta};
use crate::svg::{render, Plot, Series};
use crate::task::{build_task, grid_1d, sine_truth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    PosteriorBand,
    Roc,
    Scaling,
}

impl Kind {
    pub fn from_name(name: &str) -> CliResult<Self> {
        match name {
            "posterior_band" => Ok(Kind::PosteriorBand),
            "roc" => Ok(Kind::Roc),
            "scaling" => Ok(Kind::Scaling),
            other => Err(CliError::config(format!(
                "unknown figure kind {other:?}; expected posterior_band, roc, or scaling"
            ))),
        }
    }
}

fn require_input<'a>(inputs: &'a [std::path::PathBuf], what: &str) -> CliResult<&'a Path> {
    let path = inputs
        .first()
        .ok_or_else(|| CliError::data(format!("missing input: expected {what}")))?;
    if !path.exists() {
        return Err(CliError::data(format!(
            "missing input: {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Reads an entire numeric CSV with the given expected header.
fn read_numeric_csv(path: &Path, expect_header: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let actual: Vec<&str> = headers.iter().collect();
    if actual != expect_header {
        return Err(CliError::data(format!(
            "{}: expected columns {expect_header:?}, found {actual:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let row: Vec<f64> = record
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::data(format!("{}: bad number {v:?}: {e}", path.display())))
            })
            .collect::<CliResult<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_file(out_dir: &Path, name: &str, content: &str, meta: &mut ManifestMeta) -> CliResult<()> {
    let path = out_dir.join(name);
    std::fs::write(&path, content)?;
    meta.artifact(name, &path)?;
    Ok(())
}

fn posterior_band(
    cfg: &RunConfig,
    config_path: &Path,
    inputs: &[std::path::PathBuf],
    out_dir: &Path,
) -> CliResult<()> {
    let ckpt_dir = require_input(inputs, "a checkpoint directory")?;
    if cfg.eval.n_samples == 0 {
        return Err(CliError::data("empty sample set: eval.n_samples is 0"));
    }
    let task = build_task(&cfg.task)?;
    let Some(x_range) = task.x_range else {
        return Err(CliError::config(
            "posterior_band needs a 1-D task with a plot range (the sine task)",
        ));
    };
    let ckpt = checkpoint::load(ckpt_dir)?;
    let in_dim = match &ckpt {
        Checkpoint::Gpn(m) => m.config().data_dim(),
        Checkpoint::Ensemble(m) => m.config().arch.input_dim(),
    };
    if in_dim != 1 {
        return Err(CliError::config(format!(
            "posterior_band needs a 1-input model, checkpoint has {in_dim} inputs"
        )));
    }

    let grid = grid_1d(x_range, cfg.figure.grid_points);
    let samples = match &ckpt {
        Checkpoint::Gpn(m) => sample_posterior(m, &grid, cfg.eval.n_samples, cfg.eval.seed)?,
        Checkpoint::Ensemble(m) => ensemble_predict(m, &grid)?,
    };
    let mean = samples.mean_prediction();
    let (lower, upper) = interval_bounds(&samples, cfg.eval.level);
    let truth = sine_truth(&grid);

    let mut csv = String::from("x,mean,lower,upper,width\n");
    let mut band = Vec::with_capacity(grid.nrows());
    let mut mean_pts = Vec::with_capacity(grid.nrows());
    let mut truth_pts = Vec::with_capacity(grid.nrows());
    for r in 0..grid.nrows() {
        let x = grid[(r, 0)];
        let (lo, hi) = (lower[(r, 0)], upper[(r, 0)]);
        csv.push_str(&format!("{x},{},{lo},{hi},{}\n", mean[(r, 0)], hi - lo));
        band.push((x, lo, hi));
        mean_pts.push((x, mean[(r, 0)]));
        truth_pts.push((x, truth[r]));
    }
    let markers: Vec<(f64, f64)> = (0..task.train.n_rows())
        .map(|r| (task.train.x()[(r, 0)], task.train.y()[(r, 0)]))
        .collect();
    let is_sine = cfg.task.kind == TaskKind::Sine;
    let mut series = vec![Series {
        points: &mean_pts,
        color: "#1f77b4",
        label: "posterior mean",
    }];
    if is_sine {
        series.push(Series {
            points: &truth_pts,
            color: "#2ca02c",
            label: "true function",
        });
    }
    let plot = Plot {
        title: "Posterior predictive band",
        x_label: "x",
        y_label: "y",
        band: Some(&band),
        series,
        markers: &markers,
    };

    let mut meta = ManifestMeta::new("figure");
    meta.note("kind", "posterior_band");
    meta.input("config", config_path)?;
    write_file(out_dir, "band.csv", &csv, &mut meta)?;
    write_file(out_dir, "band.svg", &render(&plot), &mut meta)?;
    let manifest_path = write_manifest(out_dir, cfg, &meta)?;
    println!("figure posterior_band: wrote {}", manifest_path.display());
    Ok(())
}

fn roc(inputs: &[std::path::PathBuf], out_dir: &Path) -> CliResult<()> {
    let input = require_input(inputs, "an eval run's roc.csv")?;
    let rows = read_numeric_csv(input, &["fpr", "tpr"])?;
    if rows.is_empty() {
        return Err(CliError::data(format!(
            "{} has no ROC points",
            input.display()
        )));
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    let diagonal = [(0.0, 0.0), (1.0, 1.0)];
    let plot = Plot {
        title: "OOD detection ROC",
        x_label: "false positive rate",
        y_label: "true positive rate",
        band: None,
        series: vec![
            Series {
                points: &points,
                color: "#1f77b4",
                label: "variance score",
            },
            Series {
                points: &diagonal,
                color: "#999999",
                label: "chance",
            },
        ],
        markers: &[],
    };
    let mut csv = String::from("fpr,tpr\n");
    for (fpr, tpr) in &points {
        csv.push_str(&format!("{fpr},{tpr}\n"));
    }
    let mut meta = ManifestMeta::new("figure");
    meta.note("kind", "roc");
    meta.input("roc_csv", input)?;
    write_file(out_dir, "roc_points.csv", &csv, &mut meta)?;
    write_file(out_dir, "roc.svg", &render(&plot), &mut meta)?;
    let manifest_path = write_meta_only(out_dir, &meta)?;
    println!("figure roc: wrote {}", manifest_path.display());
    Ok(())
}

fn scaling(inputs: &[std::path::PathBuf], out_dir: &Path) -> CliResult<()> {
    let input = require_input(inputs, "an ensemble train run's scaling.csv")?;
    let rows = read_numeric_csv(input, &["members", "cumulative_seconds", "ood_auc"])?;
    if rows.is_empty() {
        return Err(CliError::data(format!(
            "{} has no scaling points",
            input.display()
        )));
    }
    let curve: Vec<(f64, f64)> = rows.iter().map(|r| (r[1], r[2])).collect();
    let mut meta = ManifestMeta::new("figure");
    meta.note("kind", "scaling");
    meta.input("scaling_csv", input)?;

    // Optional second input: the GPN (train seconds, detection AUC) point.
    let mut markers = Vec::new();
    if let Some(gpn_path) = inputs.get(1) {
        if !gpn_path.exists() {
            return Err(CliError::data(format!(
                "missing input: {} does not exist",
                gpn_path.display()
            )));
        }
        let gpn_rows = read_numeric_csv(gpn_path, &["seconds", "ood_auc"])?;
        let row = gpn_rows.first().ok_or_else(|| {
            CliError::data(format!("{} has no GPN point", gpn_path.display()))
        })?;
        markers.push((row[0], row[1]));
        meta.input("gpn_point_csv", gpn_path)?;
    }

    let plot = Plot {
        title: "Detection AUC vs training time",
        x_label: "cumulative training seconds",
        y_label: "OOD detection AUC",
        band: None,
        series: vec![Series {
            points: &curve,
            color: "#1f77b4",
            label: "ensemble (cumulative)",
        }],
        markers: &markers,
    };
    let mut csv = String::from("members,cumulative_seconds,ood_auc\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
    }
    if let Some((secs, auc)) = markers.first() {
        csv.push_str(&format!("gpn,{secs},{auc}\n"));
    }
    write_file(out_dir, "scaling_figure.csv", &csv, &mut meta)?;
    write_file(out_dir, "scaling.svg", &render(&plot), &mut meta)?;
    let manifest_path = write_meta_only(out_dir, &meta)?;
    println!("figure scaling: wrote {}", manifest_path.display());
    Ok(())
}

pub fn run(
    kind: Kind,
    cfg: Option<(&RunConfig, &Path)>,
    inputs: &[std::path::PathBuf],
    out_dir: &Path,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)?;
    match kind {
        Kind::PosteriorBand => {
            let (cfg, config_path) = cfg.ok_or_else(|| {
                CliError::config("figure posterior_band needs --config for the task definition")
            })?;
            posterior_band(cfg, config_path, inputs, out_dir)
        }
        Kind::Roc => roc(inputs, out_dir),
        Kind::Scaling => scaling(inputs, out_dir),
    }
}
