//! Model assembly, class-weighted loss, SGD training and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{
    compute_class_weights, median_count, softmax_backward, weighted_cross_entropy, weighted_cross_entropy_grad_probs,
    ClassWeights, LOG_EPSILON,
};
pub use model::{
    glorot_bound, init_parameters, predict, predict_batch, Layer, LayerParams, ModelConfig, ModelParameters,
};
pub use train::{
    batch_gradient, evaluate_model, save_history, sgd_momentum_update, train, train_until, write_history_csv,
    EpochRecord, TrainConfig, TrainOutcome, HISTORY_HEADER,
};
