//! Small transformer-encoder masked language model with hand-written
//! backpropagation.

mod checkpoint;
mod config;
mod encoder;
mod gradcheck;
mod masking;
mod model;
pub(crate) mod ops;
mod oracle;
mod params;
mod real;
mod train;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, TrainingMetadata};
pub use config::{MaskingMode, MaskingPolicy, MlmConfig, TrainConfig};
pub use encoder::{encode, encode_backward, output_backward, output_logits, Batch, EncoderCache};
pub use gradcheck::{
    check_gradients, grad_check, relative_error, GradCheckReport, DEFAULT_EPSILON,
    DEFAULT_SAMPLES_PER_TENSOR,
};
pub use masking::{mask_batch, mask_positions, MaskedBatch};
pub use model::{mlm_loss, MlmLoss, MlmModel, PredictionQuery};
pub use oracle::bayes_oracle_shuffle;
pub use params::{LayerParams, Parameters, TensorSet};
pub use real::{DType, Real};
pub use train::{
    choose_single_positions, clip_gradients, evaluate_single_mask, gradient_norm, train, Adam,
    LossCurve, SingleMaskEval, TrainOutcome, Trainer,
};
pub(crate) use params::normal as normal_init;
