//! Experiment configuration files.
//!
//! A config is a TOML document. Every table is optional; missing keys take the
//! defaults shown by `ExperimentConfig::default()`. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! output = "out/oracle"
//!
//! [schedule]
//! kind = "linear"
//! gamma_max = 0.1
//!
//! [sampler]
//! steps = 1024
//! final_step = "euler"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use bridgekit_core::analysis::BoundExperiment;
use bridgekit_core::domains::{Decoder, EncoderHandle, ToyWorld};
use bridgekit_core::encoder::{EndpointSpec, RetinaFilter};
use bridgekit_core::model::{NetConfig, TrainConfig};
use bridgekit_core::sampler::SamplerConfig;
use bridgekit_core::{Error as CoreError, Schedule, ScheduleKind};
use serde::{Deserialize, Serialize};

/// Which velocity field drives sampling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Exact bridge field of the target domain (affine worlds only).
    #[default]
    Oracle,
    /// A trained network checkpoint.
    Model { checkpoint: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Index of the source domain; the other one is the target.
    pub source: usize,
    pub encoder: EncoderHandle,
    pub decoder: Decoder,
    pub field_noise: f64,
    /// Confidence parameter of the probabilistic bound.
    pub delta: f64,
    pub trials: usize,
    /// Step counts of the convergence study.
    pub steps: Vec<usize>,
    pub reference_steps: usize,
    /// Endpoint used by the convergence study.
    pub endpoint: Vec<f64>,
    /// Number of pairs for `sample`, `translate`, `invert` and `domains dump`.
    pub count: usize,
    /// Neighbourhood size for CKNNA.
    pub knn: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            source: 0,
            encoder: EncoderHandle::Oracle,
            decoder: Decoder::Identity,
            field_noise: 0.0,
            delta: 0.1,
            trials: 100,
            steps: (6..=12).map(|p| 1usize << p).collect(),
            reference_steps: 1 << 14,
            endpoint: vec![1.0],
            count: 16,
            knn: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub filter: RetinaFilter,
    pub image_size: usize,
    pub patch: usize,
    /// Number of toy image pairs rendered for fitting.
    pub images: usize,
    pub components: usize,
    pub endpoint: EndpointSpec,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            filter: RetinaFilter::default(),
            image_size: 32,
            patch: 8,
            images: 64,
            components: 16,
            endpoint: EndpointSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; copied into the sampler, model and training seeds on resolve.
    pub seed: u64,
    pub output: PathBuf,
    /// Turn invariant violations into a failing exit status.
    pub strict: bool,
    pub schedule: ScheduleKind,
    pub world: ToyWorld,
    pub field: FieldSpec,
    pub sampler: SamplerConfig,
    pub analysis: AnalysisConfig,
    pub model: NetConfig,
    pub training: TrainConfig,
    pub encoder: EncoderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            strict: true,
            schedule: ScheduleKind::LinearBridge { gamma_max: 0.1 },
            world: ToyWorld::gaussian_1d([1.0, 2.0], [0.0, 0.5]).expect("default world is valid"),
            field: FieldSpec::Oracle,
            sampler: SamplerConfig::default(),
            analysis: AnalysisConfig::default(),
            model: NetConfig::default(),
            training: TrainConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

/// A config that failed to parse or validate.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config field `{}` (line {line}): {}", self.field, self.message),
            None => write!(f, "config field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Line of `key = ...` inside `[section]` (or at top level for an empty section).
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && fallback.is_none() {
                fallback = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        let Some((k, _)) = line.split_once('=') else { continue };
        if k.trim() == key && in_section {
            return Some(i + 1);
        }
        if section.is_empty() && current.is_empty() && k.trim() == key {
            return Some(i + 1);
        }
    }
    fallback
}

impl ExperimentConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(source).map_err(|e| ConfigError {
            field: "<document>".into(),
            line: e.span().map(|s| source[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        cfg.resolve(source)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.schedule).expect("validated on resolve")
    }

    pub fn target(&self) -> usize {
        1 - self.analysis.source
    }

    pub fn bound_experiment(&self) -> BoundExperiment {
        BoundExperiment {
            source: self.analysis.source,
            encoder: self.analysis.encoder,
            decoder: self.analysis.decoder,
            field_noise: self.analysis.field_noise,
            delta: self.analysis.delta,
            trials: self.analysis.trials,
            seed: self.seed,
        }
    }

    /// Propagates the master seed and checks every section.
    fn resolve(mut self, source: &str) -> Result<Self, ConfigError> {
        self.sampler.seed = self.seed;
        self.model.seed = self.seed;
        self.training.seed = self.seed;
        let wrap = |section: &str, e: CoreError| {
            let key = match &e {
                CoreError::InvalidParameter { name, .. } => name.split('/').next().unwrap_or(name).to_string(),
                _ => String::new(),
            };
            let field = if key.is_empty() {
                section.to_string()
            } else {
                format!("{section}.{key}")
            };
            ConfigError {
                line: locate(source, section, &key),
                field,
                message: e.to_string(),
            }
        };
        Schedule::new(self.schedule).map_err(|e| wrap("schedule", e))?;
        self.world.validate().map_err(|e| wrap("world", e))?;
        self.sampler.validate().map_err(|e| wrap("sampler", e))?;
        self.training.validate().map_err(|e| wrap("training", e))?;
        self.encoder.filter.validate().map_err(|e| wrap("encoder.filter", e))?;
        self.encoder
            .endpoint
            .validate()
            .map_err(|e| wrap("encoder.endpoint", e))?;
        let bad = |key: &str, message: &str| ConfigError {
            field: format!("analysis.{key}"),
            line: locate(source, "analysis", key),
            message: message.to_string(),
        };
        let a = &self.analysis;
        if a.source > 1 {
            return Err(bad("source", "domain index must be 0 or 1"));
        }
        if a.steps.contains(&0) {
            return Err(bad("steps", "step counts must be positive"));
        }
        if a.count == 0 {
            return Err(bad("count", "must be positive"));
        }
        if a.endpoint.len() != self.world.latent_dim {
            return Err(bad("endpoint", "length must equal the world's latent dimension"));
        }
        if self.model.dim != self.world.latent_dim {
            return Err(ConfigError {
                field: "model.dim".into(),
                line: locate(source, "model", "dim"),
                message: format!("must equal the world's latent dimension {}", self.world.latent_dim),
            });
        }
        if self.model.cond_dim != 0 && self.model.cond_dim != self.world.latent_dim {
            return Err(ConfigError {
                field: "model.cond_dim".into(),
                line: locate(source, "model", "cond_dim"),
                message: "the condition is the source observation, so cond_dim must be 0 or the latent dimension"
                    .into(),
            });
        }
        Ok(self)
    }
}
