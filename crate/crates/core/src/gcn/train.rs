use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};
use crate::feature_context::{
    mix_seed, GeneratorConfig, Label, ManifestEntry, MaskMode, SequenceSample,
};
use crate::gcn::metrics::{self, Metrics};
use crate::gcn::model::{loss_and_grads, predict, Classifier};
use crate::numerics::{Matrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Masking ratio applied to training samples.
    pub train_m_r: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            decay_every: 100,
            decay_factor: 0.1,
            batch_size: 8,
            seed: 42,
            train_m_r: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GraceError::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(GraceError::InvalidArgument(
                "epochs, batch size and decay interval must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.train_m_r) {
            return Err(GraceError::InvalidArgument(format!(
                "training masking ratio {} outside [0, 1]",
                self.train_m_r
            )));
        }
        Ok(())
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// Adaptive-moment optimizer state over a list of parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let p = p.as_mut_slice();
            for (((w, &gi), mi), vi) in p
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainTrace {
    /// `epoch,train_loss,val_acc`.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_acc\n");
        for r in &self.epochs {
            let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, val));
        }
        out
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("epoch,step,learning_rate,loss\n");
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.step, r.learning_rate, r.loss
            ));
        }
        out
    }
}

/// Optimizer position; enough to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: Adam,
    pub epochs_done: usize,
    pub trace: TrainTrace,
}

impl TrainState {
    pub fn fresh<C: Classifier + ?Sized>(model: &C) -> Self {
        let shapes: Vec<(usize, usize)> = model.params().iter().map(|m| m.shape()).collect();
        Self {
            adam: Adam::new(&shapes),
            epochs_done: 0,
            trace: TrainTrace::default(),
        }
    }
}

/// Mini-batch training with mean batch loss, continuing from `state`, until `cfg.epochs`.
///
/// Each epoch shuffles with a stream derived from `(cfg.seed, epoch)`, so a
/// resumed run sees exactly the batches an uninterrupted run would.
pub fn train<C: Classifier + ?Sized>(
    model: &mut C,
    train_set: &[SequenceSample],
    val_set: &[SequenceSample],
    cfg: &TrainConfig,
    mut state: TrainState,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(GraceError::InvalidArgument("training set is empty".into()));
    }
    for epoch in state.epochs_done..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            cfg.seed,
            epoch as u64,
        )));

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut total: Option<Vec<Matrix>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, grads, _) = loss_and_grads(model, &train_set[i])?;
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(GraceError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                batch_loss += loss;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let grads: Vec<Matrix> = total
                .expect("non-empty batch")
                .iter()
                .map(|g| g.scale(inv))
                .collect();
            let mut params = model.params_mut();
            state.adam.step(&mut params, &grads, lr);
            batch_loss *= inv;
            epoch_loss += batch_loss * batch.len() as f64;
            state.trace.steps.push(StepRecord {
                epoch,
                step: state.adam.t,
                learning_rate: lr,
                loss: batch_loss,
            });
        }

        let val_acc = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_samples(model, val_set)?.accuracy)
        };
        state.trace.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_acc,
        });
        state.epochs_done = epoch + 1;
    }
    Ok(state)
}

pub fn scores<C: Classifier + ?Sized>(model: &C, samples: &[SequenceSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| Ok(predict(model, s)?.p_fake()))
        .collect()
}

pub fn evaluate_samples<C: Classifier + ?Sized>(
    model: &C,
    samples: &[SequenceSample],
) -> Result<Metrics> {
    let s = scores(model, samples)?;
    let labels: Vec<bool> = samples.iter().map(|x| x.label == Label::Fake).collect();
    Ok(metrics::compute(&s, &labels))
}

/// Regenerates `entries`, masks them at `m_r` with `mode`, and scores the model.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorConfig,
    entries: &[ManifestEntry],
    m_r: f64,
    mode: MaskMode,
) -> Result<Metrics> {
    let samples = entries
        .iter()
        .map(|e| e.materialize_masked(generator, m_r, mode))
        .collect::<Result<Vec<_>>>()?;
    evaluate_samples(model, &samples)
}

/// Mean `|X|₁` of the model's feature context over `samples`.
pub fn mean_feature_l1<C: Classifier + ?Sized>(
    model: &C,
    samples: &[SequenceSample],
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let rec = model.record(&mut tape, s)?;
        total += tape.value(rec.features).l1_norm();
    }
    Ok(total / samples.len().max(1) as f64)
}
