//! Two-stage fine-tuning support: stage configs and trainer manifests, image
//! staging, and a toy encoder/decoder model for checking the objective.

mod staging;
mod toy;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use staging::{image_path, stage_images, StageEntry, StageStatus, StagedDataset, STAGE1_MAX_SIDE};
pub use toy::{
    image_features, masked_nll, objective_loss, run_toy_training, synthetic_corpus, TokenModel, Tokenizer, ToyConfig,
    ToyDims, ToyModel, TrainingError, TrainingSample, TrainingTrace,
};

pub const MANIFEST_KIND: &str = "dentvqa.training";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// Answer-only supervision at reduced resolution.
    One,
    /// Answer, rationale and location supervision at original resolution.
    Two,
}

impl TryFrom<u8> for Stage {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(format!("stage must be 1 or 2, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Linear,
    Constant,
}

impl Schedule {
    /// Learning-rate multiplier at `step` of `total`, after linear warm-up.
    pub fn factor(self, step: usize, total: usize, warmup_ratio: f64) -> f64 {
        let total = total.max(1) as f64;
        let warm = (warmup_ratio * total).ceil();
        let s = step as f64;
        if s < warm {
            return (s + 1.0) / warm;
        }
        let progress = ((s - warm) / (total - warm).max(1.0)).clamp(0.0, 1.0);
        match self {
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
            Schedule::Linear => 1.0 - progress,
            Schedule::Constant => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub per_device_batch: u32,
    pub gradient_accumulation: u32,
    pub epochs: u32,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub trainable: Vec<Scope>,
}

impl StageConfig {
    pub fn defaults(stage: Stage) -> Self {
        match stage {
            Stage::One => StageConfig {
                stage,
                per_device_batch: 12,
                gradient_accumulation: 16,
                epochs: 3,
                learning_rate: 2e-5,
                warmup_ratio: 0.1,
                schedule: Schedule::Cosine,
                trainable: vec![Scope::Encoder, Scope::Decoder],
            },
            Stage::Two => StageConfig {
                stage,
                per_device_batch: 2,
                gradient_accumulation: 32,
                epochs: 5,
                learning_rate: 1e-5,
                warmup_ratio: 0.1,
                schedule: Schedule::Cosine,
                trainable: vec![Scope::Decoder],
            },
        }
    }

    /// Per-device batch times accumulation steps (single device).
    pub fn effective_batch(&self) -> u32 {
        self.per_device_batch * self.gradient_accumulation
    }

    pub fn trains(&self, scope: Scope) -> bool {
        self.trainable.contains(&scope)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Invalid(m));
        if self.per_device_batch == 0 || self.gradient_accumulation == 0 || self.epochs == 0 {
            return bad("batch, accumulation and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning rate {} is outside (0, 1]", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warm-up ratio {} is outside [0, 1)", self.warmup_ratio));
        }
        if self.trainable.is_empty() {
            return bad("no trainable scope".into());
        }
        let mut seen = self.trainable.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.trainable.len() {
            return bad("duplicate trainable scope".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("manifest parse error: {0}")]
    Parse(String),
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    kind: String,
    version: u32,
    effective_batch: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_max_side: Option<u32>,
    config: StageConfig,
}

/// Render a validated config as a TOML manifest for an external trainer.
pub fn emit_manifest(config: &StageConfig) -> Result<String, ManifestError> {
    config.validate()?;
    let file = ManifestFile {
        kind: MANIFEST_KIND.into(),
        version: MANIFEST_VERSION,
        effective_batch: config.effective_batch(),
        image_max_side: (config.stage == Stage::One).then_some(STAGE1_MAX_SIDE),
        config: config.clone(),
    };
    toml::to_string(&file).map_err(|e| ManifestError::Parse(e.to_string()))
}

pub fn parse_manifest(text: &str) -> Result<StageConfig, ManifestError> {
    let file: ManifestFile = toml::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))?;
    if file.kind != MANIFEST_KIND || file.version != MANIFEST_VERSION {
        return Err(ManifestError::Parse(format!("unsupported manifest {} v{}", file.kind, file.version)));
    }
    file.config.validate()?;
    if file.effective_batch != file.config.effective_batch() {
        return Err(ManifestError::Invalid(format!(
            "effective_batch {} does not equal batch x accumulation {}",
            file.effective_batch,
            file.config.effective_batch()
        )));
    }
    Ok(file.config)
}
