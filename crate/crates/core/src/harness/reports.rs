use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convergence::{SmoothingReport, TheoremAudit};
use crate::entanglement::SpectralCertificate;
use crate::error::{GraceError, Result};
use crate::feature_context::MaskMode;
use crate::gcn::Metrics;

pub const REPORT_VERSION: u32 = 1;

/// One evaluated (model, masking ratio, mask mode) point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Ablation name, or `baseline`.
    pub model: String,
    pub m_r: f64,
    pub mode: MaskMode,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub config_fingerprint: String,
}

impl EvalRow {
    pub fn new(
        model: &str,
        m_r: f64,
        mode: MaskMode,
        m: &Metrics,
        seed: u64,
        fingerprint: &str,
    ) -> Self {
        Self {
            model: model.to_string(),
            m_r,
            mode,
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            auc: m.auc,
            n_samples: m.n_samples,
            seed,
            config_fingerprint: fingerprint.to_string(),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub config_fingerprint: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "model,m_r,mode,accuracy,macro_f1,auc,n_samples,seed,config_fingerprint\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.m_r,
                r.mode.name(),
                r.accuracy,
                r.macro_f1,
                opt(r.auc),
                r.n_samples,
                r.seed,
                r.config_fingerprint
            ));
        }
        out
    }

    /// First row matching the model, ratio and mode.
    pub fn find(&self, model: &str, m_r: f64, mode: MaskMode) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.mode == mode && (r.m_r - m_r).abs() < 1e-12)
    }
}

/// Clean-test evaluation written next to each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub version: u32,
    pub model: String,
    pub epochs: usize,
    pub optimizer_steps: u64,
    pub final_train_loss: Option<f64>,
    pub test: EvalRow,
    /// Mean `|X|₁` over the training split after training; absent for the baseline.
    pub feature_l1: Option<f64>,
    pub seed: u64,
    pub config_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub axis: String,
    pub value: f64,
    pub model: String,
    pub m_r: f64,
    pub mode: MaskMode,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
    pub n_samples: usize,
    pub feature_l1: f64,
    pub seed: u64,
    pub config_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperReport {
    pub version: u32,
    pub axis: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub rows: Vec<HyperRow>,
}

impl HyperReport {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("axis,value,model,m_r,mode,accuracy,macro_f1,auc,n_samples,feature_l1,seed,config_fingerprint\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.axis,
                r.value,
                r.model,
                r.m_r,
                r.mode.name(),
                r.accuracy,
                r.macro_f1,
                opt(r.auc),
                r.n_samples,
                r.feature_l1,
                r.seed,
                r.config_fingerprint
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub version: u32,
    /// `checkpoint` or `fresh`.
    pub source: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub certificate: SpectralCertificate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: u32,
    pub source: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub weight_scale: f64,
    /// Assumption checks over every graph-convolution layer.
    pub assumptions: TheoremAudit,
    /// Index of the square layer iterated to a fixed point.
    pub iterated_layer: Option<usize>,
    pub contraction: Option<TheoremAudit>,
    pub divergence: Option<Divergence>,
    pub smoothing: SmoothingReport,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GraceError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| GraceError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GraceError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
