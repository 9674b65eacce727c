//! Synthetic frame sequences, the frame-masking protocol, and assembly of
//! the node-by-channel feature context.
//!
//! A sample is `N` frames of `h x w x c_in` values. Node `((n * h) + i) * w + j`
//! (zero-based) of the feature context holds the projected feature of frame
//! `n` at location `(i, j)`, so all locations of the first frame come first.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};
use crate::numerics::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }
}

/// Replacement content for masked frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Fresh unit-variance noise, independent of the label and of other frames.
    Background,
    /// All-zero frame.
    Black,
}

impl MaskMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Background => "background",
            MaskMode::Black => "black",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = GraceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(MaskMode::Background),
            "black" => Ok(MaskMode::Black),
            other => Err(GraceError::InvalidArgument(format!(
                "unknown mask mode `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    /// Scale of the class template added to valid frames of fake samples.
    pub signal_amplitude: f64,
    /// AR(1) coefficient of the frame sequence, in `[0, 1)`.
    pub temporal_coherence: f64,
    /// Seed of the fixed class template.
    pub template_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_frames: 16,
            height: 4,
            width: 4,
            c_in: 8,
            signal_amplitude: 0.6,
            temporal_coherence: 0.5,
            template_seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.height == 0 || self.width == 0 || self.c_in == 0 {
            return Err(GraceError::InvalidArgument(
                "generator dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.temporal_coherence) {
            return Err(GraceError::InvalidArgument(format!(
                "temporal coherence {} outside [0, 1)",
                self.temporal_coherence
            )));
        }
        if !(self.signal_amplitude >= 0.0 && self.signal_amplitude.is_finite()) {
            return Err(GraceError::InvalidArgument(format!(
                "signal amplitude {} must be finite and non-negative",
                self.signal_amplitude
            )));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.c_in
    }

    /// Node count `N * h * w`.
    pub fn nodes(&self) -> usize {
        self.n_frames * self.height * self.width
    }

    /// The fixed `h x w x c_in` class pattern, unit RMS.
    pub fn class_template(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.template_seed);
        let mut t: Vec<f64> = (0..self.frame_len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        if rms > 0.0 {
            t.iter_mut().for_each(|v| *v /= rms);
        }
        t
    }
}

/// One synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// Frame `n` is laid out as `(i * w + j) * c_in + channel`.
    pub frames: Vec<Vec<f64>>,
    pub label: Label,
    pub validity: Vec<bool>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
}

impl SequenceSample {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn nodes(&self) -> usize {
        self.frames.len() * self.height * self.width
    }

    /// Raw `d x c_in` node matrix in feature-context row order.
    pub fn node_matrix(&self) -> Matrix {
        let d = self.nodes();
        let mut data = Vec::with_capacity(d * self.c_in);
        for frame in &self.frames {
            data.extend_from_slice(frame);
        }
        Matrix::from_vec(d, self.c_in, data).expect("frames hold finite values")
    }

    /// Reorders frames: frame `k` of the result is frame `order[k]` of `self`.
    pub fn reorder_frames(&self, order: &[usize]) -> SequenceSample {
        SequenceSample {
            frames: order.iter().map(|&k| self.frames[k].clone()).collect(),
            validity: order.iter().map(|&k| self.validity[k]).collect(),
            ..self.clone()
        }
    }
}

/// Zero-based node index of frame `n`, row `i`, column `j`.
pub fn node_index(n: usize, i: usize, j: usize, height: usize, width: usize) -> usize {
    (n * height + i) * width + j
}

/// Draws one sample: a stationary AR(1) sequence of Gaussian fields, plus the
/// scaled class template on every frame when the label is fake.
pub fn generate_sample(cfg: &GeneratorConfig, label: Label, seed: u64) -> Result<SequenceSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = cfg.temporal_coherence;
    let innovation = (1.0 - phi * phi).sqrt();
    let len = cfg.frame_len();
    let template = cfg.class_template();

    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_frames);
    let mut field = vec![0.0; len];
    for n in 0..cfg.n_frames {
        for v in field.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v = if n == 0 {
                eps
            } else {
                phi * *v + innovation * eps
            };
        }
        let mut frame = field.clone();
        if label == Label::Fake {
            for (x, t) in frame.iter_mut().zip(&template) {
                *x += cfg.signal_amplitude * t;
            }
        }
        frames.push(frame);
    }
    Ok(SequenceSample {
        frames,
        label,
        validity: vec![true; cfg.n_frames],
        seed,
        height: cfg.height,
        width: cfg.width,
        c_in: cfg.c_in,
    })
}

/// Number of frames replaced at masking ratio `m_r`.
pub fn masked_count(m_r: f64, n_frames: usize) -> usize {
    // the epsilon keeps products like 0.35 * 20 from flooring to 6
    (((m_r * n_frames as f64) + 1e-9).floor() as usize).min(n_frames)
}

/// Replaces `⌊m_r N⌋` frames chosen uniformly without replacement.
///
/// Selection is a seeded shuffle truncated to the masked count, so for a fixed
/// seed the masked set at a lower ratio is contained in the set at a higher one.
pub fn apply_mask(
    s: &SequenceSample,
    m_r: f64,
    mode: MaskMode,
    seed: u64,
) -> Result<SequenceSample> {
    if !(0.0..=1.0).contains(&m_r) {
        return Err(GraceError::InvalidArgument(format!(
            "masking ratio {m_r} outside [0, 1]"
        )));
    }
    let n = s.n_frames();
    let k = masked_count(m_r, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out = s.clone();
    let len = s.height * s.width * s.c_in;
    for &frame in &order[..k] {
        out.validity[frame] = false;
        out.frames[frame] = match mode {
            MaskMode::Black => vec![0.0; len],
            MaskMode::Background => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(frame as u64 + 1);
                (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        };
    }
    Ok(out)
}

/// Rectified per-location projection of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureContext {
    /// `d x c`, rows in node order.
    pub x: Matrix,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureContext {
    pub fn nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn channels(&self) -> usize {
        self.x.cols()
    }
}

fn check_projector(s: &SequenceSample, projector: &Matrix, bias: &Matrix) -> Result<()> {
    if projector.rows() != s.c_in || projector.cols() == 0 {
        return Err(GraceError::ShapeMismatch {
            op: "project_and_assemble (projector)",
            left: (s.nodes(), s.c_in),
            right: projector.shape(),
        });
    }
    if bias.shape() != (1, projector.cols()) {
        return Err(GraceError::ShapeMismatch {
            op: "project_and_assemble (bias)",
            left: projector.shape(),
            right: bias.shape(),
        });
    }
    Ok(())
}

/// Maps every location through `x ↦ max(0, Pᵀx + bias)` and stacks the results in node order.
pub fn project_and_assemble(
    s: &SequenceSample,
    projector: &Matrix,
    bias: &Matrix,
) -> Result<FeatureContext> {
    check_projector(s, projector, bias)?;
    let mut x = s.node_matrix().matmul(projector)?;
    for i in 0..x.rows() {
        for (v, b) in x.row_mut(i).iter_mut().zip(bias.as_slice()) {
            *v = (*v + b).max(0.0);
        }
    }
    Ok(FeatureContext {
        x,
        n_frames: s.n_frames(),
        height: s.height,
        width: s.width,
    })
}

/// Tape form of [`project_and_assemble`]; `projector` and `bias` are trainable leaves.
pub fn project_on_tape(
    tape: &mut Tape,
    s: &SequenceSample,
    projector: Var,
    bias: Var,
) -> Result<Var> {
    check_projector(s, tape.value(projector), tape.value(bias))?;
    let raw = tape.leaf(s.node_matrix());
    let lin = tape.matmul(raw, projector)?;
    let shifted = tape.add_row(lin, bias)?;
    Ok(tape.relu(shifted))
}

/// Which partition a manifest entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub label: Label,
    pub m_r: f64,
    pub mode: MaskMode,
    pub split: Split,
}

impl ManifestEntry {
    /// Seed of the masking draw for this entry.
    pub fn mask_seed(&self) -> u64 {
        mix_seed(self.seed, 0x6d61_736b)
    }

    /// Regenerates the sample and applies the entry's own masking ratio.
    pub fn materialize(&self, cfg: &GeneratorConfig) -> Result<SequenceSample> {
        self.materialize_masked(cfg, self.m_r, self.mode)
    }

    /// Regenerates the sample and masks it at an explicit ratio and mode.
    pub fn materialize_masked(
        &self,
        cfg: &GeneratorConfig,
        m_r: f64,
        mode: MaskMode,
    ) -> Result<SequenceSample> {
        let clean = generate_sample(cfg, self.label, self.seed)?;
        apply_mask(&clean, m_r, mode, self.mask_seed())
    }
}

/// Dataset description from which every sample can be regenerated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl DatasetManifest {
    /// Builds an 8:1:1 train/val/test manifest with alternating labels inside
    /// each split, shuffled.
    pub fn build(
        generator: &GeneratorConfig,
        n_samples: usize,
        seed: u64,
        train_m_r: f64,
        train_mode: MaskMode,
    ) -> Result<Self> {
        generator.validate()?;
        if n_samples == 0 {
            return Err(GraceError::InvalidArgument(
                "dataset must be non-empty".into(),
            ));
        }
        if !(0.0..=1.0).contains(&train_m_r) {
            return Err(GraceError::InvalidArgument(format!(
                "masking ratio {train_m_r} outside [0, 1]"
            )));
        }
        let n_train = n_samples * 8 / 10;
        let n_val = n_samples / 10;
        let n_test = n_samples - n_train - n_val;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(n_samples);
        for (split, count) in [
            (Split::Train, n_train),
            (Split::Val, n_val),
            (Split::Test, n_test),
        ] {
            let mut labels: Vec<Label> = (0..count).map(|i| Label::from_index(i % 2)).collect();
            labels.shuffle(&mut rng);
            let m_r = if split == Split::Test { 0.0 } else { train_m_r };
            for label in labels {
                entries.push(ManifestEntry {
                    seed: rand::Rng::random(&mut rng),
                    label,
                    m_r,
                    mode: train_mode,
                    split,
                });
            }
        }
        Ok(Self {
            version: MANIFEST_VERSION,
            seed,
            generator: generator.clone(),
            entries,
        })
    }

    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| GraceError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraceError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// SplitMix64 finalizer over `seed ^ salt`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = (seed ^ salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
