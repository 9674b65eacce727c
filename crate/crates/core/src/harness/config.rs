use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GraceError, Result};
use crate::feature_context::{mix_seed, GeneratorConfig, MaskMode};
use crate::gcn::{Ablation, Hyper, TrainConfig};

/// Everything needed to regenerate a run from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Total generated sequences before the 8:1:1 split.
    pub n_samples: usize,
    pub generator: GeneratorConfig,
    pub hyper: Hyper,
    pub train: TrainConfig,
    /// Corruption applied to training and validation sequences.
    pub train_mask_mode: MaskMode,
    pub eval_m_r_list: Vec<f64>,
    pub eval_modes: Vec<MaskMode>,
    /// GRACE variants to train and evaluate.
    pub ablations: Vec<Ablation>,
    /// Also train and evaluate the mean-pool comparator.
    pub baseline: bool,
    /// Iteration budget of the contraction audit.
    pub audit_iters: usize,
    /// Factor applied to every graph-convolution weight before auditing.
    pub audit_weight_scale: f64,
    /// Not part of the fingerprint.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_samples: 500,
            generator: GeneratorConfig::default(),
            hyper: Hyper::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 20,
                ..TrainConfig::default()
            },
            train_mask_mode: MaskMode::Background,
            eval_m_r_list: (0..=8).map(|i| i as f64 / 10.0).collect(),
            eval_modes: vec![MaskMode::Background, MaskMode::Black],
            ablations: vec![Ablation::Full],
            baseline: true,
            audit_iters: 500,
            audit_weight_scale: 1.0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

const MODEL_SALT: u64 = 0x006d_6f64_656c;
const BASELINE_SALT: u64 = 0x6261_7365;
const AUDIT_SALT: u64 = 0x0061_7564_6974;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraceError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Sets the experiment seed and the training shuffle seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.hyper.validate()?;
        self.train.validate()?;
        if self.n_samples < 10 {
            return Err(GraceError::InvalidArgument(format!(
                "n_samples {} leaves an empty split; need at least 10",
                self.n_samples
            )));
        }
        if let Some(bad) = self
            .eval_m_r_list
            .iter()
            .find(|m| !(0.0..=1.0).contains(*m))
        {
            return Err(GraceError::InvalidArgument(format!(
                "evaluation masking ratio {bad} outside [0, 1]"
            )));
        }
        if self.eval_m_r_list.is_empty() || self.eval_modes.is_empty() {
            return Err(GraceError::InvalidArgument(
                "evaluation ratio and mode lists must be non-empty".into(),
            ));
        }
        if self.ablations.is_empty() && !self.baseline {
            return Err(GraceError::InvalidArgument(
                "nothing to train: no ablations and no baseline".into(),
            ));
        }
        if !(self.audit_weight_scale.is_finite()) {
            return Err(GraceError::InvalidArgument(
                "audit weight scale must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 prefix over the canonical JSON of every field except `output_dir`.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Fingerprint of the inputs that determine a trained model, excluding the
    /// epoch budget so a finished run can be extended by resuming.
    pub fn training_fingerprint(&self) -> String {
        let mut train = self.train.clone();
        train.epochs = 0;
        let key = serde_json::json!({
            "seed": self.seed,
            "n_samples": self.n_samples,
            "generator": self.generator,
            "hyper": self.hyper,
            "train": train,
            "train_mask_mode": self.train_mask_mode,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_seed(&self) -> u64 {
        mix_seed(self.seed, MODEL_SALT)
    }

    pub fn baseline_seed(&self) -> u64 {
        mix_seed(self.seed, BASELINE_SALT)
    }

    pub fn audit_seed(&self) -> u64 {
        mix_seed(self.seed, AUDIT_SALT)
    }
}

/// Parses `0,0.4,0.8` style lists.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| GraceError::InvalidArgument(format!("cannot parse `{s}`: {e}")))
        })
        .collect()
}
