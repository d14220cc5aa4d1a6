//! Consistency-regularized training of a small feature extractor and
//! classifier.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod trainer;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradient, gradient_check, relative_error, sample_parameter_indices, FD_STEP};
pub use loss::{
    cross_entropy, stain_reg_loss, stain_reg_loss_with, total_loss, ConsistencyReduction,
    LossBreakdown,
};
pub use model::{classify, forward_features, predict, softmax, FeatureVector, ModelDims, ModelParams};
pub use trainer::{
    batch_loss, batch_loss_grad, epoch_order, predict_all, prepare_batch, preprocess, sgd_step,
    train, train_from, train_step, write_log_csv, Augmenter, LogRow, PreparedSample, Sample,
    StainAugmenter, TrainConfig, TrainOutcome,
};
