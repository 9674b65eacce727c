use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entanglement::propagator_on_tape;
use crate::error::{GraceError, Result};
use crate::feature_context::{project_on_tape, Label, SequenceSample};
use crate::numerics::{Matrix, Tape, Var};

/// Probability floor inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which of the propagation and sparsity ingredients are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Unnormalized `Â` propagation, no sparsity penalty.
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "gcn+glspr")]
    GcnGlspr,
    #[serde(rename = "gcn+sc")]
    GcnSc,
    #[serde(rename = "gcn+glspr+sc")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Gcn,
        Ablation::GcnGlspr,
        Ablation::GcnSc,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Gcn => "gcn",
            Ablation::GcnGlspr => "gcn+glspr",
            Ablation::GcnSc => "gcn+sc",
            Ablation::Full => "gcn+glspr+sc",
        }
    }

    pub fn glspr(self) -> bool {
        matches!(self, Ablation::GcnGlspr | Ablation::Full)
    }

    pub fn sc(self) -> bool {
        matches!(self, Ablation::GcnSc | Ablation::Full)
    }

    pub fn from_flags(glspr: bool, sc: bool) -> Ablation {
        match (glspr, sc) {
            (false, false) => Ablation::Gcn,
            (true, false) => Ablation::GcnGlspr,
            (false, true) => Ablation::GcnSc,
            (true, true) => Ablation::Full,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = GraceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Ablation::Gcn),
            "gcn+glspr" | "glspr" => Ok(Ablation::GcnGlspr),
            "gcn+sc" | "sc" => Ok(Ablation::GcnSc),
            "gcn+glspr+sc" | "full" => Ok(Ablation::Full),
            other => Err(GraceError::InvalidArgument(format!(
                "unknown ablation `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    /// Projected channel count `c`.
    pub channels: usize,
    pub g_n: usize,
    pub g_dim: usize,
    pub n_out: usize,
    pub n_cls: usize,
    pub alpha: f64,
    pub q: f64,
    pub glspr_enabled: bool,
    pub sc_enabled: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            channels: 8,
            g_n: 8,
            g_dim: 32,
            n_out: 64,
            n_cls: 2,
            alpha: 1e-5,
            q: 0.5,
            glspr_enabled: true,
            sc_enabled: true,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.g_n == 0 || self.g_dim == 0 || self.n_out == 0 {
            return Err(GraceError::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.n_cls != 2 {
            return Err(GraceError::InvalidArgument(format!(
                "n_cls must be 2, got {}",
                self.n_cls
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GraceError::InvalidArgument(format!(
                "alpha {} must be finite and >= 0",
                self.alpha
            )));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(GraceError::InvalidArgument(format!(
                "q {} must be positive",
                self.q
            )));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        Ablation::from_flags(self.glspr_enabled, self.sc_enabled)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.glspr_enabled = ablation.glspr();
        self.sc_enabled = ablation.sc();
        self
    }

    /// Sparsity weight actually applied in the loss.
    pub fn effective_alpha(&self) -> f64 {
        if self.sc_enabled {
            self.alpha
        } else {
            0.0
        }
    }
}

/// Glorot-uniform matrix, entries in `±√(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("finite init")
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// One leaf per parameter block, in [`Classifier::params`] order.
    pub params: Vec<Var>,
    /// Feature context `X`, the target of the sparsity penalty.
    pub features: Var,
    /// `1 x n_cls`.
    pub logits: Var,
}

/// A trainable two-class sequence classifier.
pub trait Classifier {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;
    /// Records the forward pass on caller-supplied parameter nodes, one per
    /// block in [`Classifier::params`] order.
    fn forward(
        &self,
        tape: &mut Tape,
        params: Vec<Var>,
        sample: &SequenceSample,
    ) -> Result<Recorded>;
    fn sparsity_weight(&self) -> f64;

    /// Records the forward pass with the current parameters as fresh leaves.
    fn record(&self, tape: &mut Tape, sample: &SequenceSample) -> Result<Recorded> {
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        self.forward(tape, params, sample)
    }
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn p_fake(&self) -> f64 {
        self.probabilities[Label::Fake.index()]
    }
}

/// Scalar loss nodes for one sample.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub recorded: Recorded,
    pub probs: Var,
    pub cross_entropy: Var,
    pub l1: Var,
    pub total: Var,
}

/// `-Σ_c Y_c log Ŷ_c + α |X|₁` on the tape.
pub fn record_loss<C: Classifier + ?Sized>(
    model: &C,
    tape: &mut Tape,
    sample: &SequenceSample,
    label: Label,
) -> Result<LossNodes> {
    let recorded = model.record(tape, sample)?;
    loss_from(model, tape, recorded, label)
}

/// [`record_loss`] over caller-supplied parameter nodes.
pub fn record_loss_with<C: Classifier + ?Sized>(
    model: &C,
    tape: &mut Tape,
    params: Vec<Var>,
    sample: &SequenceSample,
    label: Label,
) -> Result<LossNodes> {
    let recorded = model.forward(tape, params, sample)?;
    loss_from(model, tape, recorded, label)
}

fn loss_from<C: Classifier + ?Sized>(
    model: &C,
    tape: &mut Tape,
    recorded: Recorded,
    label: Label,
) -> Result<LossNodes> {
    let probs = tape.softmax_rows(recorded.logits);
    let logp = tape.log_floor(probs, PROB_FLOOR);
    let n_cls = tape.value(logp).cols();
    let mut onehot = Matrix::zeros(1, n_cls);
    onehot[(0, label.index())] = 1.0;
    let picked = tape.mask_mul(logp, onehot)?;
    let picked = tape.sum(picked);
    let cross_entropy = tape.scale(picked, -1.0);
    let abs = tape.abs(recorded.features);
    let l1 = tape.sum(abs);
    let penalty = tape.scale(l1, model.sparsity_weight());
    let total = tape.add(cross_entropy, penalty)?;
    Ok(LossNodes {
        recorded,
        probs,
        cross_entropy,
        l1,
        total,
    })
}

pub fn predict<C: Classifier + ?Sized>(model: &C, sample: &SequenceSample) -> Result<Prediction> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, sample)?;
    let probs = tape.softmax_rows(rec.logits);
    Ok(Prediction {
        probabilities: tape.value(probs).as_slice().to_vec(),
        logits: tape.value(rec.logits).as_slice().to_vec(),
    })
}

/// Loss value for one sample.
pub fn sample_loss<C: Classifier + ?Sized>(
    model: &C,
    sample: &SequenceSample,
    label: Label,
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = record_loss(model, &mut tape, sample, label)?;
    Ok(tape.scalar(nodes.total))
}

/// Loss, parameter gradients, and `|X|₁` for one sample.
pub fn loss_and_grads<C: Classifier + ?Sized>(
    model: &C,
    sample: &SequenceSample,
) -> Result<(f64, Vec<Matrix>, f64)> {
    let mut tape = Tape::new();
    let nodes = record_loss(model, &mut tape, sample, sample.label)?;
    let grads = tape.backward(nodes.total)?;
    let g = nodes
        .recorded
        .params
        .iter()
        .map(|&v| grads.get(v))
        .collect();
    Ok((tape.scalar(nodes.total), g, tape.scalar(nodes.l1)))
}

/// Graph-convolution head over the entangled feature graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraceModel {
    /// `c_in x c`.
    pub projector: Matrix,
    /// `1 x c`.
    pub bias: Matrix,
    /// Layer 0 is `c x g_dim`, the rest `g_dim x g_dim`.
    pub gcn_weights: Vec<Matrix>,
    /// `g_dim x n_out`.
    pub w_out: Matrix,
    /// `n_out x n_cls`.
    pub w_cls: Matrix,
    pub hyper: Hyper,
}

impl GraceModel {
    pub fn init(c_in: usize, hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if c_in == 0 {
            return Err(GraceError::InvalidArgument("c_in must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projector = glorot(&mut rng, c_in, hyper.channels);
        let bias = Matrix::zeros(1, hyper.channels);
        let mut gcn_weights = Vec::with_capacity(hyper.g_n);
        for layer in 0..hyper.g_n {
            let fan_in = if layer == 0 {
                hyper.channels
            } else {
                hyper.g_dim
            };
            gcn_weights.push(glorot(&mut rng, fan_in, hyper.g_dim));
        }
        let w_out = glorot(&mut rng, hyper.g_dim, hyper.n_out);
        let w_cls = glorot(&mut rng, hyper.n_out, hyper.n_cls);
        Ok(Self {
            projector,
            bias,
            gcn_weights,
            w_out,
            w_cls,
            hyper,
        })
    }

    pub fn c_in(&self) -> usize {
        self.projector.rows()
    }

    /// Checks every block against the hyperparameters.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let h = &self.hyper;
        let mut expected = vec![(self.c_in(), h.channels), (1, h.channels)];
        for layer in 0..h.g_n {
            expected.push((if layer == 0 { h.channels } else { h.g_dim }, h.g_dim));
        }
        expected.push((h.g_dim, h.n_out));
        expected.push((h.n_out, h.n_cls));
        let actual: Vec<(usize, usize)> = self.params().iter().map(|m| m.shape()).collect();
        if actual != expected {
            return Err(GraceError::InvalidArgument(format!(
                "parameter shapes {actual:?} do not match hyperparameters {expected:?}"
            )));
        }
        Ok(())
    }

    /// Multiplies every graph-convolution weight by `k`.
    pub fn scale_gcn_weights(&mut self, k: f64) {
        for w in &mut self.gcn_weights {
            *w = w.scale(k);
        }
    }
}

impl Classifier for GraceModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.projector, &self.bias];
        out.extend(self.gcn_weights.iter());
        out.push(&self.w_out);
        out.push(&self.w_cls);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.projector, &mut self.bias];
        out.extend(self.gcn_weights.iter_mut());
        out.push(&mut self.w_out);
        out.push(&mut self.w_cls);
        out
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: Vec<Var>,
        sample: &SequenceSample,
    ) -> Result<Recorded> {
        if params.len() != self.params().len() {
            return Err(GraceError::InvalidArgument(format!(
                "expected {} parameter blocks, got {}",
                self.params().len(),
                params.len()
            )));
        }
        let (projector, bias) = (params[0], params[1]);
        let layers = &params[2..2 + self.hyper.g_n];
        let w_out = params[2 + self.hyper.g_n];
        let w_cls = params[3 + self.hyper.g_n];

        let x = project_on_tape(tape, sample, projector, bias)?;
        let prop = propagator_on_tape(tape, x, self.hyper.q, self.hyper.glspr_enabled)?;
        let mut z = x;
        for &w in layers {
            z = gcn_layer_on_tape(tape, z, prop, w)?;
        }
        let pooled = tape.mean_rows(z);
        let hidden = tape.matmul(pooled, w_out)?;
        let hidden = tape.relu(hidden);
        let logits = tape.matmul(hidden, w_cls)?;
        Ok(Recorded {
            params,
            features: x,
            logits,
        })
    }

    fn sparsity_weight(&self) -> f64 {
        self.hyper.effective_alpha()
    }
}

/// `max(0, M Z W)`.
pub fn gcn_layer(z: &Matrix, m: &Matrix, w: &Matrix) -> Result<Matrix> {
    if m.rows() != m.cols() || m.cols() != z.rows() {
        return Err(GraceError::ShapeMismatch {
            op: "gcn_layer (propagator)",
            left: m.shape(),
            right: z.shape(),
        });
    }
    let zw = z.matmul(w)?;
    Ok(m.matmul(&zw)?.map(|v| v.max(0.0)))
}

pub fn gcn_layer_on_tape(tape: &mut Tape, z: Var, m: Var, w: Var) -> Result<Var> {
    let zw = tape.matmul(z, w)?;
    let mzw = tape.matmul(m, zw)?;
    Ok(tape.relu(mzw))
}

/// Mean-pooled rectified projection followed by an affine classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub projector: Matrix,
    pub bias: Matrix,
    /// `c x n_cls`.
    pub w_cls: Matrix,
    /// `1 x n_cls`.
    pub b_cls: Matrix,
}

impl BaselineModel {
    pub fn init(c_in: usize, channels: usize, seed: u64) -> Result<Self> {
        if c_in == 0 || channels == 0 {
            return Err(GraceError::InvalidArgument(
                "baseline dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            projector: glorot(&mut rng, c_in, channels),
            bias: Matrix::zeros(1, channels),
            w_cls: glorot(&mut rng, channels, 2),
            b_cls: Matrix::zeros(1, 2),
        })
    }
}

impl Classifier for BaselineModel {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.projector, &self.bias, &self.w_cls, &self.b_cls]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.projector,
            &mut self.bias,
            &mut self.w_cls,
            &mut self.b_cls,
        ]
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: Vec<Var>,
        sample: &SequenceSample,
    ) -> Result<Recorded> {
        if params.len() != self.params().len() {
            return Err(GraceError::InvalidArgument(format!(
                "expected {} parameter blocks, got {}",
                self.params().len(),
                params.len()
            )));
        }
        let x = project_on_tape(tape, sample, params[0], params[1])?;
        let pooled = tape.mean_rows(x);
        let logits = tape.matmul(pooled, params[2])?;
        let logits = tape.add(logits, params[3])?;
        Ok(Recorded {
            params,
            features: x,
            logits,
        })
    }

    fn sparsity_weight(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::EntangledGraph;
    use crate::feature_context::{generate_sample, project_and_assemble, GeneratorConfig};
    use crate::numerics::{eval_softmax_rows, grad_check_blocks};

    fn tiny_generator() -> GeneratorConfig {
        GeneratorConfig {
            n_frames: 2,
            height: 2,
            width: 2,
            c_in: 3,
            ..GeneratorConfig::default()
        }
    }

    fn tiny_hyper() -> Hyper {
        Hyper {
            channels: 3,
            g_n: 2,
            g_dim: 4,
            n_out: 5,
            ..Hyper::default()
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn zero_sample(cfg: &GeneratorConfig) -> SequenceSample {
        let mut s = generate_sample(cfg, Label::Real, 0).unwrap();
        for f in &mut s.frames {
            f.iter_mut().for_each(|x| *x = 0.0);
        }
        s
    }

    #[test]
    fn layer_examples() {
        let m = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]);
        let z = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(
            gcn_layer(&z, &m, &Matrix::from_rows(&[[2.0]])).unwrap(),
            Matrix::from_rows(&[[2.0], [2.0]])
        );
        assert_eq!(
            gcn_layer(&z, &m, &Matrix::zeros(1, 1)).unwrap(),
            Matrix::zeros(2, 1)
        );
        assert!(gcn_layer(&z, &Matrix::identity(3), &Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn three_layers_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x =
            Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let g = EntangledGraph::from_features(&x, 0.5).unwrap();
        let ws = [
            random(&mut rng, 3, 4),
            random(&mut rng, 4, 4),
            random(&mut rng, 4, 4),
        ];
        let mut z = x.clone();
        let mut oracle = x.clone();
        for w in &ws {
            z = gcn_layer(&z, &g.m, w).unwrap();
            let mut next = Matrix::zeros(6, w.cols());
            for i in 0..6 {
                for j in 0..w.cols() {
                    let mut acc = 0.0;
                    for k in 0..6 {
                        for l in 0..w.rows() {
                            acc += g.m[(i, k)] * oracle[(k, l)] * w[(l, j)];
                        }
                    }
                    next[(i, j)] = acc.max(0.0);
                }
            }
            oracle = next;
        }
        assert!(z.sub(&oracle).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn layer_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let x = Matrix::from_vec(6, 2, (0..12).map(|_| rng.random_range(0.0..1.0)).collect())
                .unwrap();
            let g = EntangledGraph::from_features(&x, 0.5).unwrap();
            let z = random(&mut rng, 6, 3);
            let w = random(&mut rng, 3, 3);
            let perm = [3, 0, 5, 1, 4, 2];
            let lhs = gcn_layer(&z.permute_rows(&perm), &g.m.permute_symmetric(&perm), &w).unwrap();
            let rhs = gcn_layer(&z, &g.m, &w).unwrap().permute_rows(&perm);
            assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn all_zero_sample_is_uniform() {
        let model = GraceModel::init(3, tiny_hyper(), 1).unwrap();
        let p = predict(&model, &zero_sample(&tiny_generator())).unwrap();
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        let loss = sample_loss(&model, &zero_sample(&tiny_generator()), Label::Fake).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn prediction_invariant_to_frame_order() {
        let cfg = GeneratorConfig {
            n_frames: 4,
            ..tiny_generator()
        };
        let model = GraceModel::init(3, tiny_hyper(), 2).unwrap();
        let s = generate_sample(&cfg, Label::Fake, 9).unwrap();
        let a = predict(&model, &s).unwrap();
        let b = predict(&model, &s.reorder_frames(&[2, 0, 3, 1])).unwrap();
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let cfg = tiny_generator();
        let model = GraceModel::init(3, tiny_hyper(), 3).unwrap();
        let s = generate_sample(&cfg, Label::Real, 4).unwrap();
        let x = project_and_assemble(&s, &model.projector, &model.bias)
            .unwrap()
            .x;
        let m = EntangledGraph::from_features(&x, model.hyper.q).unwrap().m;
        let mut z = x;
        for w in &model.gcn_weights {
            z = gcn_layer(&z, &m, w).unwrap();
        }
        let pooled = Matrix::row_vector(
            &(0..z.cols())
                .map(|j| (0..z.rows()).map(|i| z[(i, j)]).sum::<f64>() / z.rows() as f64)
                .collect::<Vec<_>>(),
        );
        let hidden = pooled.matmul(&model.w_out).unwrap().map(|v| v.max(0.0));
        let logits = hidden.matmul(&model.w_cls).unwrap();
        let probs = eval_softmax_rows(&logits);
        let p = predict(&model, &s).unwrap();
        for (a, b) in p.probabilities.iter().zip(probs.as_slice()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn loss_decomposes_into_ce_and_penalty() {
        let cfg = tiny_generator();
        let hyper = Hyper {
            alpha: 0.01,
            ..tiny_hyper()
        };
        let model = GraceModel::init(3, hyper, 5).unwrap();
        let s = generate_sample(&cfg, Label::Fake, 6).unwrap();
        let mut tape = Tape::new();
        let nodes = record_loss(&model, &mut tape, &s, Label::Fake).unwrap();
        let ce = tape.scalar(nodes.cross_entropy);
        let l1 = tape.scalar(nodes.l1);
        assert!((tape.scalar(nodes.total) - (ce + 0.01 * l1)).abs() < 1e-12);
        let p_fake = tape.value(nodes.probs)[(0, 1)];
        assert!((ce + p_fake.ln()).abs() < 1e-12);
        assert!((l1 - tape.value(nodes.recorded.features).l1_norm()).abs() < 1e-12);
        // the penalty is switched off without the sparsity ingredient
        let off = GraceModel {
            hyper: Hyper {
                sc_enabled: false,
                ..model.hyper.clone()
            },
            ..model.clone()
        };
        let mut tape = Tape::new();
        let nodes = record_loss(&off, &mut tape, &s, Label::Fake).unwrap();
        assert_eq!(tape.scalar(nodes.total), tape.scalar(nodes.cross_entropy));
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let mut model = BaselineModel::init(3, 3, 0).unwrap();
        model.w_cls = Matrix::zeros(3, 2);
        model.b_cls = Matrix::from_rows(&[[-30.0, 30.0]]);
        let s = generate_sample(&tiny_generator(), Label::Fake, 1).unwrap();
        assert!(sample_loss(&model, &s, Label::Fake).unwrap() < 1e-20);
        // the wrong class sits below the probability floor
        let wrong = sample_loss(&model, &s, Label::Real).unwrap();
        assert!((wrong + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn softmax_on_simplex_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let logits = random(&mut rng, 1, 2).scale(20.0);
            let p = eval_softmax_rows(&logits);
            assert!((p.sum() - 1.0).abs() <= 1e-12);
            assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted = eval_softmax_rows(&logits.map(|v| v + 7.5));
            assert!(p.sub(&shifted).unwrap().max_abs() <= 1e-12);
        }
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        let cfg = tiny_generator();
        for (seed, label) in [(21, Label::Fake), (22, Label::Real), (23, Label::Fake)] {
            let hyper = Hyper {
                alpha: 1e-3,
                ..tiny_hyper()
            };
            let model = GraceModel::init(3, hyper, seed).unwrap();
            let s = generate_sample(&cfg, label, seed + 100).unwrap();
            let blocks: Vec<Matrix> = model.params().into_iter().cloned().collect();
            let errs = grad_check_blocks(
                |tape, vars| Ok(record_loss_with(&model, tape, vars.to_vec(), &s, label)?.total),
                &blocks,
                1e-5,
            )
            .unwrap();
            assert_eq!(errs.len(), 2 + 2 + 2);
            for (b, e) in errs.iter().enumerate() {
                assert!(*e <= 1e-4, "seed {seed} block {b}: {e:e}");
            }
        }
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let model = BaselineModel::init(3, 3, 4).unwrap();
        let s = generate_sample(&tiny_generator(), Label::Real, 8).unwrap();
        let blocks: Vec<Matrix> = model.params().into_iter().cloned().collect();
        let errs = grad_check_blocks(
            |tape, vars| Ok(record_loss_with(&model, tape, vars.to_vec(), &s, Label::Real)?.total),
            &blocks,
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e <= 1e-4), "{errs:?}");
    }

    #[test]
    fn every_ablation_runs_forward() {
        let cfg = GeneratorConfig::default();
        let s = generate_sample(&cfg, Label::Fake, 3).unwrap();
        for ablation in Ablation::ALL {
            let model =
                GraceModel::init(cfg.c_in, Hyper::default().with_ablation(ablation), 7).unwrap();
            let p = predict(&model, &s).unwrap();
            assert!(
                p.probabilities.iter().all(|v| v.is_finite()),
                "{ablation:?}"
            );
            assert_eq!(model.hyper.ablation(), ablation);
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
            assert_eq!(Ablation::from_flags(a.glspr(), a.sc()), a);
        }
        assert!("transformer".parse::<Ablation>().is_err());
    }

    #[test]
    fn wrong_parameter_count_rejected() {
        let model = GraceModel::init(3, tiny_hyper(), 0).unwrap();
        let s = generate_sample(&tiny_generator(), Label::Real, 0).unwrap();
        let mut tape = Tape::new();
        let one = tape.leaf(Matrix::zeros(1, 1));
        assert!(model.forward(&mut tape, vec![one], &s).is_err());
    }
}
