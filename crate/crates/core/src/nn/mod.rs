//! Small fully connected encoder, the two classification heads and training.

pub mod checkpoint;
pub mod head;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use head::{gll_head_forward, gll_head_forward_with, with_anchors, BaseSpec, GllForward, GllHeadConfig, Model, Pass};
pub use loss::{accuracy, base_scores, cross_entropy, softmax, ScoreKind};
pub use mlp::{Activation, Layer, Mlp, MlpCache, MlpGrads};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
pub use train::{
    batch_pass, class_covering_sample, evaluation_anchors, gll_test_accuracy, intra_class_spread, pgd_train_step,
    softmax_test_accuracy, train, train_observed, BaseSelection, EpochMetrics, HeadKind, Observer, PgdConfig,
    TrainConfig, TrainOutcome,
};
