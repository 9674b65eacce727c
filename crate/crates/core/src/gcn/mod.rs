//! Graph-convolution stack, readout, classifier, and training.

pub mod checkpoint;
pub mod metrics;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use metrics::Metrics;
pub use model::{
    gcn_layer, gcn_layer_on_tape, glorot, loss_and_grads, predict, record_loss, record_loss_with,
    sample_loss, Ablation, BaselineModel, Classifier, GraceModel, Hyper, LossNodes, Prediction,
    Recorded, PROB_FLOOR,
};
pub use train::{
    evaluate, evaluate_samples, mean_feature_l1, scores, train, Adam, EpochRecord, StepRecord,
    TrainConfig, TrainState, TrainTrace,
};
