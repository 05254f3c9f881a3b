//! Encoder-decoder transformer, training and verification.

mod autograd;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use autograd::{AttnMask, Tape, Var, LAYER_NORM_EPS};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{parameter_count, ModelConfig, ModelParams};
pub use tensor::Tensor;
pub use train::{
    input_ids, pretrain, sample_to_example, train_step, Adam, LossTrace, PretrainOptions, PretrainOutcome,
    StepOutcome, TrainConfig, Trainer, CLASSIFICATION_LR, PRETRAIN_LR,
};
pub use transformer::{
    batch_loss_grad, classify, combined_pretrain_loss, encode, encode_masked, encoder_attention, example_loss,
    example_loss_grad, frame_target, greedy_decode, seq2seq_loss, strip_eos, truncation_count, BatchGrad, Encoded,
    Example, Target,
};
