//! Localization networks on a small reverse-mode autodiff engine.
//!
//! Four architectures share one tape ([`Graph`]): MLC, Map-Split-C and
//! Mask-Split on a convolutional phase encoder, and Map-Split-R on a
//! recurrent IPD encoder. Training runs in `f32`; every operation is also
//! available in `f64` for gradient checks.

mod checkpoint;
mod graph;
mod infer;
mod loss;
mod model;
mod real;
mod tensor;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, FORMAT_VERSION,
    MAGIC,
};
pub use graph::{Graph, Var, MASK_DENOM_EPS};
pub use infer::{
    argmax, chunked_estimate, circular_median_deg, combine_chunks, decode, estimate,
    estimate_features, mlc_decode, ChunkConfig,
};
pub use loss::{
    fixed_order_targets, loss_and_grad, loss_value, multi_hot, one_hot, pit_loss, soft_target,
    LossKind, LOG_FLOOR,
};
pub use model::{
    features, BinSelection, Forward, Model, ModelConfig, ModelKind, CNN_MAPS, FORGET_BIAS,
};
pub use real::{gemm, Real};
pub use tensor::{ParamGrads, ParamId, ParamStore, Tensor};
pub use train::{
    evaluate_examples, example_loss, log_csv, pair_losses, targets, train, train_step, Adam,
    EpochLog, TrainConfig, TrainExample,
};
