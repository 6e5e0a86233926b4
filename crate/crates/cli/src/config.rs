//! TOML experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clwb_core::backbones::{DEFAULT_SUP_P, DEFAULT_S_MAX};
use clwb_core::composer::{DEFAULT_NU, DEFAULT_TAU};
use clwb_core::oodlab::{OdinGrid, DEFAULT_CONTRASTIVE_TAU};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes_per_task: usize,
        /// Keep only the first N tasks.
        #[serde(default)]
        tasks: Option<usize>,
        /// Keep at most this many training (and a quarter as many test) images per class.
        #[serde(default)]
        per_class: Option<usize>,
        /// 2×2 average pooling before training.
        #[serde(default)]
        downsample: bool,
        /// Permute the class order before splitting.
        #[serde(default)]
        shuffle_classes: Option<u64>,
    },
    Gaussian {
        tasks: usize,
        classes_per_task: usize,
        dim: usize,
        separation: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    Images {
        tasks: usize,
        classes_per_task: usize,
        side: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_image_noise")]
        noise: f64,
    },
}

fn default_image_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackboneConfig {
    Hat {
        hidden: Vec<usize>,
        #[serde(default = "default_s_max")]
        s_max: f64,
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
        #[serde(default = "yes")]
        snap: bool,
    },
    Sup {
        hidden: Vec<usize>,
        #[serde(default = "default_p")]
        p: f64,
    },
}

impl BackboneConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneConfig::Hat { .. } => "hat",
            BackboneConfig::Sup { .. } => "sup",
        }
    }
}

fn default_s_max() -> f64 {
    DEFAULT_S_MAX
}
fn default_lambdas() -> Vec<f64> {
    vec![1.0, 0.75]
}
fn default_p() -> f64 {
    DEFAULT_SUP_P
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ce,
    RotationCe,
    ContrastiveRotationCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub contrastive_epochs: usize,
    pub contrastive_tau: f64,
    pub flip: bool,
    pub noise: f64,
    /// Fraction of each task's training data held out for ODIN grid search.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            epochs: 10,
            lr: 0.05,
            batch: 64,
            contrastive_epochs: 10,
            contrastive_tau: DEFAULT_CONTRASTIVE_TAU,
            flip: true,
            noise: 0.05,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Msp,
    Odin,
    RotationEnsemble,
}

impl ScorerKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "msp" => Ok(Self::Msp),
            "odin" => Ok(Self::Odin),
            "rotation-ensemble" => Ok(Self::RotationEnsemble),
            _ => Err(CliError::Usage(format!("unknown scorer `{s}` (msp | odin | rotation-ensemble)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteKind {
    ConcatArgmax,
    Compose,
    Calibrated,
}

impl RouteKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "concat-argmax" => Ok(Self::ConcatArgmax),
            "compose" => Ok(Self::Compose),
            "calibrated" => Ok(Self::Calibrated),
            _ => Err(CliError::Usage(format!("unknown route `{s}` (concat-argmax | compose | calibrated)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TpVariant {
    SigmoidMaxlogit,
    /// `σ(max f / τ)`; argmax-equivalent to concat-argmax as τ → 0.
    SigmoidMaxlogitSharpened,
    MaxsoftmaxTemperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdinConfig {
    /// Fixed per-run settings; ignored when `grid` is true.
    pub tau: f64,
    pub eps: f64,
    /// Choose (τ, ε) per task by validation AUC over `taus × eps_grid`.
    pub grid: bool,
    pub taus: Vec<f64>,
    pub eps_grid: Vec<f64>,
}

impl Default for OdinConfig {
    fn default() -> Self {
        let g = OdinGrid::default();
        Self { tau: 1000.0, eps: 0.0014, grid: false, taus: g.taus, eps_grid: g.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposeConfig {
    pub tp: TpVariant,
    pub nu: f64,
    pub tau: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self { tp: TpVariant::SigmoidMaxlogit, nu: DEFAULT_NU, tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scorer: ScorerKind,
    pub route: RouteKind,
    pub odin: OdinConfig,
    pub compose: ComposeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerKind::Msp,
            route: RouteKind::ConcatArgmax,
            odin: OdinConfig::default(),
            compose: ComposeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub buffer: usize,
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { buffer: 200, iters: 160, lr: 0.01, batch: 15 }
    }
}

fn usage(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Parses and validates; relative dataset paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } = &mut self.dataset {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match &self.dataset {
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, classes_per_task, tasks, per_class, .. } => {
                for (name, p) in [
                    ("dataset.train_images", train_images),
                    ("dataset.train_labels", train_labels),
                    ("dataset.test_images", test_images),
                    ("dataset.test_labels", test_labels),
                ] {
                    if !p.is_file() {
                        return Err(usage(name, format!("file {} does not exist", p.display())));
                    }
                }
                if *classes_per_task == 0 {
                    return Err(usage("dataset.classes_per_task", "must be ≥ 1"));
                }
                if *tasks == Some(0) {
                    return Err(usage("dataset.tasks", "must be ≥ 1"));
                }
                if matches!(per_class, Some(n) if *n < 4) {
                    return Err(usage("dataset.per_class", "must be ≥ 4"));
                }
            }
            DatasetConfig::Gaussian { tasks, classes_per_task, dim, separation, train_per_class, test_per_class } => {
                positive("dataset.tasks", *tasks)?;
                positive("dataset.classes_per_task", *classes_per_task)?;
                positive("dataset.dim", *dim)?;
                positive("dataset.train_per_class", *train_per_class)?;
                positive("dataset.test_per_class", *test_per_class)?;
                if !(*separation > 0.0) {
                    return Err(usage("dataset.separation", "must be positive"));
                }
            }
            DatasetConfig::Images { tasks, classes_per_task, side, train_per_class, test_per_class, noise } => {
                positive("dataset.tasks", *tasks)?;
                positive("dataset.classes_per_task", *classes_per_task)?;
                positive("dataset.train_per_class", *train_per_class)?;
                positive("dataset.test_per_class", *test_per_class)?;
                if *side < 4 {
                    return Err(usage("dataset.side", "must be ≥ 4"));
                }
                if !(*noise >= 0.0) {
                    return Err(usage("dataset.noise", "must be nonnegative"));
                }
            }
        }
        match &self.backbone {
            BackboneConfig::Hat { hidden, s_max, lambdas, .. } => {
                hidden_ok(hidden)?;
                if !(*s_max > 0.0) {
                    return Err(usage("backbone.s_max", "must be positive"));
                }
                if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0)) {
                    return Err(usage("backbone.lambdas", "needs at least one nonnegative value"));
                }
            }
            BackboneConfig::Sup { hidden, p } => {
                hidden_ok(hidden)?;
                if !(*p > 0.0 && *p <= 100.0) {
                    return Err(usage("backbone.p", "must be in (0, 100]"));
                }
            }
        }
        let t = &self.train;
        positive("train.batch", t.batch)?;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(usage("train.lr", "must be positive"));
        }
        if !(t.contrastive_tau > 0.0) {
            return Err(usage("train.contrastive_tau", "must be positive"));
        }
        if !(t.noise >= 0.0) {
            return Err(usage("train.noise", "must be nonnegative"));
        }
        if !(0.0..0.5).contains(&t.validation_fraction) {
            return Err(usage("train.validation_fraction", "must be in [0, 0.5)"));
        }
        let rotations = t.loss != LossKind::Ce;
        if rotations && matches!(self.dataset, DatasetConfig::Gaussian { .. }) {
            return Err(usage("train.loss", "rotation losses need image data"));
        }
        if self.eval.scorer == ScorerKind::RotationEnsemble && !rotations {
            return Err(usage("eval.scorer", "rotation-ensemble needs a rotation loss"));
        }
        let o = &self.eval.odin;
        if !(o.tau > 0.0) || !(o.eps >= 0.0) {
            return Err(usage("eval.odin", "tau must be positive and eps nonnegative"));
        }
        if o.grid {
            if t.validation_fraction == 0.0 {
                return Err(usage("eval.odin.grid", "grid search needs train.validation_fraction > 0"));
            }
            if o.taus.is_empty() || o.eps_grid.is_empty() || o.taus.iter().any(|v| !(*v > 0.0)) || o.eps_grid.iter().any(|v| !(*v >= 0.0)) {
                return Err(usage("eval.odin.taus", "grid needs positive taus and nonnegative eps_grid values"));
            }
        }
        let c = &self.eval.compose;
        if !(c.nu > 0.0) || !(c.tau > 0.0) {
            return Err(usage("eval.compose", "nu and tau must be positive"));
        }
        let cal = &self.calibration;
        positive("calibration.buffer", cal.buffer)?;
        positive("calibration.batch", cal.batch)?;
        if !(cal.lr > 0.0) {
            return Err(usage("calibration.lr", "must be positive"));
        }
        Ok(())
    }
}

fn positive(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(usage(field, "must be ≥ 1"));
    }
    Ok(())
}

fn hidden_ok(hidden: &[usize]) -> Result<(), CliError> {
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(usage("backbone.hidden", "needs at least one positive width"));
    }
    Ok(())
}
