//! Evidentiality-ranking dual encoder.

mod format;
mod loss;
mod model;
mod train;

pub use format::{decode_model, encode_model, load_model, save_model, ModelFileError, ENCODER_FORMAT};
pub(crate) use format::{check_format, push_f32s, read_f32s, split_header};
pub use loss::{
    gradient, info_nce, info_nce_grad, loss_and_gradient, loss_se, loss_se_from_scores, loss_we,
    loss_we_from_scores, score_gradient, total_loss, BatchScores, Gradient, SparseRows,
    TrainingBatch,
};
pub use model::{dot, token_hash, EncoderModel, Side};
pub use train::{
    negative_split, question_pools, sample_batch, train, train_pools, EpochStats, Optimizer,
    QuestionPool, TrainConfig, TrainError, TrainReport,
};
