//! Training configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wingan_core::blocks::{NormKind, Placement};
use wingan_core::networks::{ConditionalSpec, DiscriminatorSpec, GeneratorSpec, DEFAULT_HEADS, DEFAULT_WINDOW};

use crate::data::DatasetKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("parsing spec {path}: {source}")]
    Spec { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Swin,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay of the generator weight average used for samples; 0 disables it.
    pub ema_beta: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            ema_beta: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub r1_gamma: f64,
    /// The penalty runs on every `r1_interval`-th step, scaled by the interval.
    pub r1_interval: u64,
    /// Losses above this magnitude abort the run.
    pub divergence: f64,
    pub bn_momentum: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            r1_gamma: 1.0,
            r1_interval: 16,
            divergence: 1e4,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub resolution: usize,
    pub classes: usize,
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Shapes,
            resolution: 32,
            classes: 2,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub attention: AttentionKind,
    pub channels: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub window: usize,
    pub force_memory: bool,
    /// A full JSON generator spec; replaces the fields above.
    pub spec: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            attention: AttentionKind::Swin,
            channels: 128,
            latent_dim: 128,
            heads: DEFAULT_HEADS,
            window: DEFAULT_WINDOW,
            force_memory: false,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub eqlr_scale: f64,
    pub skip_proj: bool,
    /// A full JSON discriminator spec; replaces the fields above.
    pub spec: Option<PathBuf>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            heads: DEFAULT_HEADS,
            window: DEFAULT_WINDOW,
            eqlr_scale: 0.1,
            skip_proj: true,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalConfig {
    pub enabled: bool,
    pub placement: Placement,
    pub norm: NormKind,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            placement: Placement::C,
            norm: NormKind::Instance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Checkpoint and sample-grid period in steps; 0 emits only at the end.
    pub every: u64,
    /// Images in each sample grid.
    pub grid: usize,
    /// Norm-ratio and attention reports at every emission.
    pub diagnostics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            every: 500,
            grid: 16,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub precision: Precision,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub conditional: ConditionalConfig,
    pub output: OutputConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            batch_size: 16,
            precision: Precision::F32,
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            dataset: DatasetConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            conditional: ConditionalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn read_spec<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Spec {
        path: path.to_path_buf(),
        source,
    })
}

impl TrainConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        // Spec paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.generator.spec, &mut cfg.discriminator.spec, &mut cfg.dataset.path] {
            if let Some(s) = p {
                if s.is_relative() {
                    *s = base.join(&*s);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn classes(&self) -> Option<usize> {
        self.conditional.enabled.then_some(self.dataset.classes)
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec, ConfigError> {
        let g = &self.generator;
        let mut spec = match &g.spec {
            Some(p) => read_spec(p)?,
            None => {
                let target = self.dataset.resolution;
                let s = match g.attention {
                    AttentionKind::Swin => GeneratorSpec::strans(target, g.channels),
                    AttentionKind::Global => GeneratorSpec::trans(target, g.channels),
                }
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let mut s = s.with_window(g.window);
                s.latent_dim = g.latent_dim;
                s.heads = g.heads;
                s.force_memory = g.force_memory;
                s
            }
        };
        if let Some(k) = self.classes() {
            spec.conditional = Some(ConditionalSpec {
                classes: k,
                placement: self.conditional.placement,
                norm: self.conditional.norm,
            });
        }
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if spec.target() != self.dataset.resolution {
            return Err(ConfigError::Invalid(format!(
                "generator output {} differs from dataset resolution {}",
                spec.target(),
                self.dataset.resolution
            )));
        }
        Ok(spec)
    }

    pub fn discriminator_spec(&self) -> Result<DiscriminatorSpec, ConfigError> {
        let d = &self.discriminator;
        let mut spec = match &d.spec {
            Some(p) => read_spec(p)?,
            None => {
                let mut s = DiscriminatorSpec::new(self.dataset.resolution, d.channels);
                s.heads = d.heads;
                s.window = d.window;
                s.eqlr_scale = d.eqlr_scale;
                s.skip_proj = d.skip_proj;
                s
            }
        };
        spec.classes = self.classes();
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if spec.resolution != self.dataset.resolution {
            return Err(ConfigError::Invalid(format!(
                "discriminator input {} differs from dataset resolution {}",
                spec.resolution, self.dataset.resolution
            )));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let o = &self.optim;
        if !(o.lr_g > 0.0 && o.lr_d > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(ConfigError::Invalid("betas must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&o.ema_beta) {
            return Err(ConfigError::Invalid("ema_beta must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.loss.r1_gamma < 0.0 || self.loss.r1_interval == 0 {
            return Err(ConfigError::Invalid("r1_gamma must be >= 0 and r1_interval positive".into()));
        }
        if self.conditional.enabled && self.dataset.classes < 2 {
            return Err(ConfigError::Invalid("conditional training needs at least 2 classes".into()));
        }
        if self.dataset.kind == DatasetKind::ImageDir && self.dataset.path.is_none() {
            return Err(ConfigError::Invalid("image_dir dataset needs a path".into()));
        }
        self.generator_spec()?;
        self.discriminator_spec()?;
        Ok(())
    }

    /// Canonical JSON of everything that shapes the training trajectory.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.steps = 0;
        c.output = OutputConfig::default();
        let g = c.generator_spec().ok();
        let d = c.discriminator_spec().ok();
        serde_json::json!({ "config": c, "generator": g, "discriminator": d }).to_string()
    }
}
