//! Checkpoint layout: a directory per trained model.
//!
//! GPN:       phi.bin (generator blob), embeddings.bin, bootstraps.bin
//!            (reference blobs back to back), checkpoint.toml.
//! Ensemble:  members.bin, anchors.bin (blobs back to back), checkpoint.toml.
//!
//! Architectures live inside the parameter blobs; the TOML sidecar holds
//! everything a blob cannot carry (loss weights, priors, counts). Loading
//! revalidates the assembled model, so a mismatched or corrupted directory
//! fails instead of predicting garbage.

use gpnkit_core::ensemble::{EnsembleConfig, EnsembleModel, Regularization};
use gpnkit_core::gpn::{GpnConfig, GpnModel, NoiseMode, PairSchedule, Task};
use gpnkit_core::nn::{read_param_blob, write_param_blob, ParamVector};
use gpnkit_core::prior::{PriorSpec, WeightScaling};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CliError, CliResult};

const EMBED_MAGIC: &[u8; 4] = b"GPNE";
const EMBED_VERSION: u16 = 1;

pub const SIDECAR: &str = "checkpoint.toml";

pub enum Checkpoint {
    Gpn(GpnModel<f64>),
    Ensemble(EnsembleModel<f64>),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Gpn(_) => "gpn",
            Checkpoint::Ensemble(_) => "ensemble",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gpn: Option<GpnSidecar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ensemble: Option<EnsembleSidecar>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GpnSidecar {
    k: usize,
    embed_dim: usize,
    beta: f64,
    noise_scale: f64,
    sigma_eps: f64,
    kl_weight: f64,
    task: String,
    pair_schedule: String,
    noise_mode: String,
    bootstrap_prior: PriorSidecar,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleSidecar {
    n_members: usize,
    regularization: String,
    noise_std: f64,
    beta: f64,
    prior: PriorSidecar,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorSidecar {
    weight_variances: Vec<f64>,
    bias_variances: Vec<f64>,
    scaling: String,
}

impl PriorSidecar {
    fn from_spec(spec: &PriorSpec) -> Self {
        PriorSidecar {
            weight_variances: spec.weight_variances.clone(),
            bias_variances: spec.bias_variances.clone(),
            scaling: spec.scaling.name().to_string(),
        }
    }

    fn to_spec(&self) -> CliResult<PriorSpec> {
        Ok(PriorSpec::new(
            self.weight_variances.clone(),
            self.bias_variances.clone(),
            WeightScaling::from_name(&self.scaling)?,
        )?)
    }
}

fn pair_schedule_name(p: PairSchedule) -> &'static str {
    match p {
        PairSchedule::Uniform => "uniform",
        PairSchedule::FullSum => "full_sum",
    }
}

pub fn pair_schedule_from_name(name: &str) -> CliResult<PairSchedule> {
    match name {
        "uniform" => Ok(PairSchedule::Uniform),
        "full_sum" => Ok(PairSchedule::FullSum),
        other => Err(CliError::config(format!("unknown pair schedule {other:?}"))),
    }
}

fn noise_mode_name(m: NoiseMode) -> &'static str {
    match m {
        NoiseMode::PerStep => "per_step",
        NoiseMode::PerPair => "per_pair",
    }
}

fn noise_mode_from_name(name: &str) -> CliResult<NoiseMode> {
    match name {
        "per_step" => Ok(NoiseMode::PerStep),
        "per_pair" => Ok(NoiseMode::PerPair),
        other => Err(CliError::config(format!("unknown noise mode {other:?}"))),
    }
}

fn regularization_name(r: Regularization) -> &'static str {
    match r {
        Regularization::Parameter => "parameter",
        Regularization::Output => "output",
    }
}

pub fn regularization_from_name(name: &str) -> CliResult<Regularization> {
    match name {
        "parameter" => Ok(Regularization::Parameter),
        "output" => Ok(Regularization::Output),
        other => Err(CliError::config(format!(
            "unknown regularization {other:?}"
        ))),
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn open(dir: &Path, name: &str) -> CliResult<BufReader<File>> {
    let path = dir.join(name);
    let file = File::open(&path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(BufReader::new(file))
}

fn write_blob_list(dir: &Path, name: &str, params: &[ParamVector<f64>]) -> CliResult<()> {
    let mut out = create(dir, name)?;
    for p in params {
        write_param_blob(p, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn read_blob_list(dir: &Path, name: &str, count: usize) -> CliResult<Vec<ParamVector<f64>>> {
    let mut input = open(dir, name)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(read_param_blob::<f64, _>(&mut input)?);
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(CliError::data(format!(
            "{name} has trailing bytes after {count} parameter blobs"
        )));
    }
    Ok(out)
}

fn write_embeddings(dir: &Path, embeddings: &[Array1<f64>]) -> CliResult<()> {
    let mut out = create(dir, "embeddings.bin")?;
    let dim = embeddings.first().map_or(0, |z| z.len());
    out.write_all(EMBED_MAGIC)?;
    out.write_all(&EMBED_VERSION.to_le_bytes())?;
    out.write_all(&(embeddings.len() as u32).to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    for z in embeddings {
        for v in z {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_embeddings(dir: &Path) -> CliResult<Vec<Array1<f64>>> {
    let mut input = open(dir, "embeddings.bin")?;
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBED_MAGIC {
        return Err(CliError::data("embeddings.bin has a bad magic number"));
    }
    let mut u16b = [0u8; 2];
    input.read_exact(&mut u16b)?;
    if u16::from_le_bytes(u16b) != EMBED_VERSION {
        return Err(CliError::data("embeddings.bin has an unsupported version"));
    }
    let mut u32b = [0u8; 4];
    input.read_exact(&mut u32b)?;
    let k = u32::from_le_bytes(u32b) as usize;
    input.read_exact(&mut u32b)?;
    let dim = u32::from_le_bytes(u32b) as usize;
    let mut out = Vec::with_capacity(k);
    let mut f64b = [0u8; 8];
    for _ in 0..k {
        let mut z = Array1::zeros(dim);
        for i in 0..dim {
            input.read_exact(&mut f64b)?;
            z[i] = f64::from_le_bytes(f64b);
        }
        out.push(z);
    }
    Ok(out)
}

fn write_sidecar(dir: &Path, sidecar: &Sidecar) -> CliResult<()> {
    let text = toml::to_string_pretty(sidecar)?;
    let path = dir.join(SIDECAR);
    std::fs::write(&path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn read_sidecar(dir: &Path) -> CliResult<Sidecar> {
    let path = dir.join(SIDECAR);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn save_gpn(dir: &Path, model: &GpnModel<f64>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let c = model.config();
    write_sidecar(
        dir,
        &Sidecar {
            kind: "gpn".into(),
            gpn: Some(GpnSidecar {
                k: c.k,
                embed_dim: c.embed_dim,
                beta: c.beta,
                noise_scale: c.noise_scale,
                sigma_eps: c.sigma_eps,
                kl_weight: c.kl_weight,
                task: c.task.name().to_string(),
                pair_schedule: pair_schedule_name(c.pair_schedule).to_string(),
                noise_mode: noise_mode_name(c.noise_mode).to_string(),
                bootstrap_prior: PriorSidecar::from_spec(&c.bootstrap_prior),
            }),
            ensemble: None,
        },
    )?;
    let mut phi_out = create(dir, "phi.bin")?;
    write_param_blob(model.phi(), &mut phi_out)?;
    phi_out.flush()?;
    write_embeddings(dir, model.embeddings())?;
    write_blob_list(dir, "bootstraps.bin", model.bootstraps())
}

pub fn save_ensemble(dir: &Path, model: &EnsembleModel<f64>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let c = model.config();
    write_sidecar(
        dir,
        &Sidecar {
            kind: "ensemble".into(),
            gpn: None,
            ensemble: Some(EnsembleSidecar {
                n_members: c.n_members,
                regularization: regularization_name(c.regularization).to_string(),
                noise_std: c.noise_std,
                beta: c.beta,
                prior: PriorSidecar::from_spec(&c.prior),
            }),
        },
    )?;
    write_blob_list(dir, "members.bin", model.members())?;
    write_blob_list(dir, "anchors.bin", model.anchors())
}

pub fn load(dir: &Path) -> CliResult<Checkpoint> {
    let sidecar = read_sidecar(dir)?;
    match sidecar.kind.as_str() {
        "gpn" => {
            let meta = sidecar
                .gpn
                .ok_or_else(|| CliError::data("gpn checkpoint is missing its [gpn] table"))?;
            let mut phi_in = open(dir, "phi.bin")?;
            let phi = read_param_blob::<f64, _>(&mut phi_in)?;
            let embeddings = read_embeddings(dir)?;
            let bootstraps = read_blob_list(dir, "bootstraps.bin", meta.k)?;
            let bootstrap_arch = bootstraps
                .first()
                .ok_or_else(|| CliError::data("gpn checkpoint has no reference networks"))?
                .arch()
                .clone();
            let config = GpnConfig {
                k: meta.k,
                embed_dim: meta.embed_dim,
                beta: meta.beta,
                noise_scale: meta.noise_scale,
                bootstrap_arch,
                bootstrap_prior: meta.bootstrap_prior.to_spec()?,
                generator_arch: phi.arch().clone(),
                sigma_eps: meta.sigma_eps,
                kl_weight: meta.kl_weight,
                task: Task::from_name(&meta.task)?,
                pair_schedule: pair_schedule_from_name(&meta.pair_schedule)?,
                noise_mode: noise_mode_from_name(&meta.noise_mode)?,
            };
            let model = GpnModel::from_parts(config, phi, embeddings, bootstraps)
                .map_err(|e| CliError::data(format!("inconsistent gpn checkpoint: {e}")))?;
            Ok(Checkpoint::Gpn(model))
        }
        "ensemble" => {
            let meta = sidecar.ensemble.ok_or_else(|| {
                CliError::data("ensemble checkpoint is missing its [ensemble] table")
            })?;
            let members = read_blob_list(dir, "members.bin", meta.n_members)?;
            let anchors = read_blob_list(dir, "anchors.bin", meta.n_members)?;
            let arch = members
                .first()
                .ok_or_else(|| CliError::data("ensemble checkpoint has no members"))?
                .arch()
                .clone();
            let config = EnsembleConfig {
                arch,
                prior: meta.prior.to_spec()?,
                regularization: regularization_from_name(&meta.regularization)?,
                noise_std: meta.noise_std,
                beta: meta.beta,
                n_members: meta.n_members,
                anchor_arch: None,
                anchor_prior: None,
            };
            let model = EnsembleModel::from_parts(config, members, anchors)
                .map_err(|e| CliError::data(format!("inconsistent ensemble checkpoint: {e}")))?;
            Ok(Checkpoint::Ensemble(model))
        }
        other => Err(CliError::data(format!(
            "unknown checkpoint kind {other:?} in {}",
            dir.join(SIDECAR).display()
        ))),
    }
}
