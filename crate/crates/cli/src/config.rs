//! Run configuration: the TOML schema shared by every subcommand.
//!
//! A run manifest embeds the fully resolved configuration under the same
//! keys, so a manifest file can be passed back through `--config` and
//! reproduces the run. The `[manifest]` table itself is accepted and
//! ignored on input for exactly that reason.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Default grid of regularizer weights swept when `beta = "grid"`.
pub const BETA_GRID_DEFAULT: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

/// Fraction of labeled training rows held out when selecting beta.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub figure: FigureConfig,
    /// Present when the file being loaded is a previous run's manifest.
    /// Carried along untouched; never interpreted as configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<toml::Table>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        cfg.manifest = None;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.model.kind == ModelKind::Ensemble && self.task.kind == TaskKind::Clusters {
            return Err(CliError::config(
                "ensemble model supports regression tasks only",
            ));
        }
        Ok(())
    }

    /// Applies the `--seed` override: one base seed fans out to the three
    /// stage seeds so a single flag pins the whole run.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.init_seed = seed;
        self.train.train_seed = seed.wrapping_add(1);
        self.eval.seed = seed.wrapping_add(2);
        self.task.seed = seed.wrapping_add(3);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// 1-D noisy sine regression with an unlabeled pool over the x range.
    Sine,
    /// 2-D two-cluster binary classification with far out-of-distribution rows.
    Clusters,
    /// Superconductivity critical-temperature regression with a threshold
    /// split into in-distribution and out-of-distribution rows.
    Superconductor,
    /// Generic CSV regression; the last fraction of rows becomes the test set.
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Seed for synthetic data generation and dataset splits.
    #[serde(default = "default_task_seed")]
    pub seed: u64,
    /// Number of labeled observations (sine task).
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    /// Observation noise standard deviation for synthetic tasks.
    #[serde(default = "default_task_noise")]
    pub noise_std: f64,
    /// Half-width of the input interval for the sine task.
    #[serde(default = "default_x_half_range")]
    pub x_half_range: f64,
    /// Angular frequency of the sine target; fixed here and echoed in the
    /// manifest so the dataset is reconstructible from the manifest alone.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Rows sampled from the superconductor table (0 = all rows).
    #[serde(default = "default_supercond_rows")]
    pub n_rows: usize,
    /// Threshold on the target separating in- from out-of-distribution rows.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// CSV file for `kind = "csv"`; also overrides the bundled
    /// superconductor path when set for `kind = "superconductor"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Target column name for `kind = "csv"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
    /// Fraction of CSV rows held out as the test set.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl TaskConfig {
    fn validate(&self) -> CliResult<()> {
        if self.kind == TaskKind::Csv {
            if self.path.is_none() {
                return Err(CliError::config("task.path is required for kind = \"csv\""));
            }
            if self.target_column.is_none() {
                return Err(CliError::config(
                    "task.target_column is required for kind = \"csv\"",
                ));
            }
            if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
                return Err(CliError::config("task.test_fraction must lie in (0, 1)"));
            }
        }
        if self.kind == TaskKind::Sine && self.n_obs == 0 {
            return Err(CliError::config("task.n_obs must be positive"));
        }
        if self.noise_std <= 0.0 {
            return Err(CliError::config("task.noise_std must be positive"));
        }
        Ok(())
    }
}

fn default_task_seed() -> u64 {
    7
}
fn default_n_obs() -> usize {
    gpnkit_core::data::SINE_DEFAULT_N_OBS
}
fn default_task_noise() -> f64 {
    0.25
}
fn default_x_half_range() -> f64 {
    2.0
}
fn default_omega() -> f64 {
    std::f64::consts::PI
}
fn default_supercond_rows() -> usize {
    3000
}
fn default_tau() -> f64 {
    gpnkit_core::data::SUPERCOND_TAU
}
fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gpn,
    Ensemble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub gpn: GpnSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
}

impl ModelConfig {
    fn validate(&self) -> CliResult<()> {
        match self.kind {
            ModelKind::Gpn => self.gpn.validate(),
            ModelKind::Ensemble => self.ensemble.validate(),
        }
    }
}

/// Either a fixed regularizer weight or a request to sweep the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSetting {
    Fixed(f64),
    Mode(String),
}

impl BetaSetting {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            BetaSetting::Fixed(v) => Some(*v),
            BetaSetting::Mode(_) => None,
        }
    }

    fn validate(&self) -> CliResult<()> {
        match self {
            BetaSetting::Fixed(v) if *v >= 0.0 => Ok(()),
            BetaSetting::Fixed(_) => Err(CliError::config("model.gpn.beta must be nonnegative")),
            BetaSetting::Mode(m) if m == "grid" => Ok(()),
            BetaSetting::Mode(m) => Err(CliError::config(format!(
                "model.gpn.beta must be a number or \"grid\", got {m:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpnSection {
    /// Number of reference nets the generator is trained to match.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dimension of the latent embedding attached to each reference net.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_beta")]
    pub beta: BetaSetting,
    /// Grid swept when `beta = "grid"`.
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    /// Standard deviation of the perturbation noise added to embeddings.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Observation noise used in the data term.
    #[serde(default = "default_sigma_eps")]
    pub sigma_eps: f64,
    #[serde(default = "default_pair_schedule")]
    pub pair_schedule: String,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub generator: GeneratorSection,
}

impl GpnSection {
    fn validate(&self) -> CliResult<()> {
        if self.k == 0 {
            return Err(CliError::config("model.gpn.k must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(CliError::config("model.gpn.embed_dim must be positive"));
        }
        self.beta.validate()?;
        if self.beta_grid.is_empty() || self.beta_grid.iter().any(|b| *b < 0.0) {
            return Err(CliError::config(
                "model.gpn.beta_grid must be nonempty with nonnegative entries",
            ));
        }
        if self.sigma_eps <= 0.0 {
            return Err(CliError::config("model.gpn.sigma_eps must be positive"));
        }
        match self.pair_schedule.as_str() {
            "full_sum" | "uniform" => {}
            other => {
                return Err(CliError::config(format!(
                    "model.gpn.pair_schedule must be \"full_sum\" or \"uniform\", got {other:?}"
                )))
            }
        }
        self.bootstrap.validate("model.gpn.bootstrap")?;
        self.generator.validate("model.gpn.generator")?;
        Ok(())
    }
}

impl Default for GpnSection {
    fn default() -> Self {
        GpnSection {
            k: default_k(),
            embed_dim: default_embed_dim(),
            beta: default_beta(),
            beta_grid: default_beta_grid(),
            kl_weight: default_kl_weight(),
            noise_scale: default_noise_scale(),
            sigma_eps: default_sigma_eps(),
            pair_schedule: default_pair_schedule(),
            bootstrap: BootstrapSection::default(),
            generator: GeneratorSection::default(),
        }
    }
}

fn default_k() -> usize {
    100
}
fn default_embed_dim() -> usize {
    10
}
fn default_beta() -> BetaSetting {
    BetaSetting::Fixed(0.1)
}
fn default_beta_grid() -> Vec<f64> {
    BETA_GRID_DEFAULT.to_vec()
}
fn default_kl_weight() -> f64 {
    1.0
}
fn default_noise_scale() -> f64 {
    0.1
}
fn default_sigma_eps() -> f64 {
    0.25
}
fn default_pair_schedule() -> String {
    "full_sum".into()
}

/// Architecture plus prior for the bootstrap reference nets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_boot_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_tanh")]
    pub activation: String,
    /// Per-layer weight prior variances, outermost first.
    #[serde(default = "default_boot_var")]
    pub weight_variances: Vec<f64>,
    #[serde(default = "default_boot_var")]
    pub bias_variances: Vec<f64>,
    /// "raw" uses the variances as given; "fan_in" divides weight
    /// variance by the layer fan-in.
    #[serde(default = "default_raw")]
    pub scaling: String,
}

impl BootstrapSection {
    fn validate(&self, ctx: &str) -> CliResult<()> {
        if self.hidden.is_empty() {
            return Err(CliError::config(format!("{ctx}.hidden must be nonempty")));
        }
        let n_layers = self.hidden.len() + 1;
        if self.weight_variances.len() != n_layers || self.bias_variances.len() != n_layers {
            return Err(CliError::config(format!(
                "{ctx} needs {n_layers} weight and bias variances (one per layer)"
            )));
        }
        validate_activation(&self.activation, ctx)?;
        gpnkit_core::prior::WeightScaling::from_name(&self.scaling)
            .map_err(|e| CliError::config(format!("{ctx}.scaling: {e}")))?;
        Ok(())
    }
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            hidden: default_boot_hidden(),
            activation: default_tanh(),
            weight_variances: default_boot_var(),
            bias_variances: default_boot_var(),
            scaling: default_raw(),
        }
    }
}

fn default_boot_hidden() -> Vec<usize> {
    vec![16]
}
fn default_tanh() -> String {
    "tanh".into()
}
fn default_boot_var() -> Vec<f64> {
    vec![40.0, 10.0]
}
fn default_raw() -> String {
    "raw".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default = "default_gen_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_relu")]
    pub activation: String,
}

impl GeneratorSection {
    fn validate(&self, ctx: &str) -> CliResult<()> {
        if self.hidden.is_empty() {
            return Err(CliError::config(format!("{ctx}.hidden must be nonempty")));
        }
        validate_activation(&self.activation, ctx)
    }
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            hidden: default_gen_hidden(),
            activation: default_relu(),
        }
    }
}

fn default_gen_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_relu() -> String {
    "relu".into()
}

fn validate_activation(name: &str, ctx: &str) -> CliResult<()> {
    gpnkit_core::nn::Activation::from_name(name)
        .map(|_| ())
        .map_err(|e| CliError::config(format!("{ctx}.activation: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_n_members")]
    pub n_members: usize,
    #[serde(default = "default_gen_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_relu")]
    pub activation: String,
    /// "parameter" anchors weights, "output" anchors function values on
    /// the pool.
    #[serde(default = "default_regularization")]
    pub regularization: String,
    #[serde(default = "default_ens_beta")]
    pub beta: f64,
    #[serde(default = "default_ens_prior_var")]
    pub weight_variances: Vec<f64>,
    #[serde(default = "default_ens_bias_var")]
    pub bias_variances: Vec<f64>,
    #[serde(default = "default_fan_in")]
    pub scaling: String,
    #[serde(default = "default_ens_noise")]
    pub noise_std: f64,
}

impl EnsembleSection {
    fn validate(&self) -> CliResult<()> {
        let ctx = "model.ensemble";
        if self.n_members < 2 {
            return Err(CliError::config(format!("{ctx}.n_members must be >= 2")));
        }
        if self.hidden.is_empty() {
            return Err(CliError::config(format!("{ctx}.hidden must be nonempty")));
        }
        validate_activation(&self.activation, ctx)?;
        match self.regularization.as_str() {
            "parameter" | "output" => {}
            other => {
                return Err(CliError::config(format!(
                    "{ctx}.regularization must be \"parameter\" or \"output\", got {other:?}"
                )))
            }
        }
        let n_layers = self.hidden.len() + 1;
        if self.weight_variances.len() != n_layers || self.bias_variances.len() != n_layers {
            return Err(CliError::config(format!(
                "{ctx} needs {n_layers} weight and bias variances (one per layer)"
            )));
        }
        gpnkit_core::prior::WeightScaling::from_name(&self.scaling)
            .map_err(|e| CliError::config(format!("{ctx}.scaling: {e}")))?;
        if self.noise_std <= 0.0 {
            return Err(CliError::config(format!("{ctx}.noise_std must be positive")));
        }
        Ok(())
    }
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            n_members: default_n_members(),
            hidden: default_gen_hidden(),
            activation: default_relu(),
            regularization: default_regularization(),
            beta: default_ens_beta(),
            weight_variances: default_ens_prior_var(),
            bias_variances: default_ens_bias_var(),
            scaling: default_fan_in(),
            noise_std: default_ens_noise(),
        }
    }
}

fn default_n_members() -> usize {
    10
}
fn default_regularization() -> String {
    "parameter".into()
}
fn default_ens_beta() -> f64 {
    0.0
}
fn default_ens_prior_var() -> Vec<f64> {
    vec![2.0; 4]
}
fn default_ens_bias_var() -> Vec<f64> {
    vec![0.5; 4]
}
fn default_fan_in() -> String {
    "fan_in".into()
}
fn default_ens_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Labeled minibatch size; absent means full batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_batch: Option<usize>,
    #[serde(default = "default_unlabeled_batch")]
    pub unlabeled_batch: usize,
    #[serde(default = "default_adam")]
    pub optimizer: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_init_seed")]
    pub init_seed: u64,
    #[serde(default = "default_train_seed")]
    pub train_seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> CliResult<()> {
        if self.unlabeled_batch == 0 {
            return Err(CliError::config("train.unlabeled_batch must be positive"));
        }
        match self.optimizer.as_str() {
            "adam" | "sgd" => {}
            other => {
                return Err(CliError::config(format!(
                    "train.optimizer must be \"adam\" or \"sgd\", got {other:?}"
                )))
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(CliError::config("train.learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> gpnkit_core::nn::Optimizer<f64> {
        match self.optimizer.as_str() {
            "sgd" => gpnkit_core::nn::Optimizer::sgd(self.learning_rate),
            _ => gpnkit_core::nn::Optimizer::adam(self.learning_rate),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            labeled_batch: None,
            unlabeled_batch: default_unlabeled_batch(),
            optimizer: default_adam(),
            learning_rate: default_lr(),
            init_seed: default_init_seed(),
            train_seed: default_train_seed(),
        }
    }
}

fn default_epochs() -> usize {
    5000
}
fn default_unlabeled_batch() -> usize {
    32
}
fn default_adam() -> String {
    "adam".into()
}
fn default_lr() -> f64 {
    3e-3
}
fn default_init_seed() -> u64 {
    100
}
fn default_train_seed() -> u64 {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Checkpoint directory produced by `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Posterior draws per input. Ensembles ignore this and report one
    /// draw per member.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

impl EvalConfig {
    // n_samples = 0 is not rejected here: requesting an empty sample set
    // is a data error (exit 3) at the point samples are drawn, not a
    // malformed config.
    fn validate(&self) -> CliResult<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::config("eval.level must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            n_samples: default_n_samples(),
            level: default_level(),
            seed: default_eval_seed(),
        }
    }
}

fn default_n_samples() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}
fn default_eval_seed() -> u64 {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureConfig {
    /// Grid resolution for posterior band figures.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            grid_points: default_grid_points(),
        }
    }
}

fn default_grid_points() -> usize {
    101
}
