//! Encoder-decoder transformer, its three pre-training heads and the training
//! loop.
//!
//! Everything is generic over [`Scalar`]: `f32` for training runs and `f64`
//! for gradient checks and bit-exact determinism runs.

mod batch;
mod checkpoint;
mod eval;
mod gradcheck;
mod loss;
mod net;
mod optim;
mod params;
pub mod tape;
pub mod tensor;
mod train;

pub use batch::{Batch, BatchItem};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta, CKPT_MAGIC,
    CKPT_VERSION,
};
pub use eval::{msp_token_accuracy, pop_accuracy, EvalCounts};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{loss_htp, loss_msp, loss_pop, total_loss, LossParts};
pub use net::{embed, forward, Forward, Mode};
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use params::{ModelConfig, ModelParams};
pub use tensor::{Mat, Scalar};
pub use train::{LossRecord, TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("packet id {id} exceeds max_packets {max}")]
    PacketIdOutOfRange { id: u8, max: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    PositionOverflow { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss (msp {msp}, pop {pop}, htp {htp}); gradient norms: {grad_norms}")]
    NonFiniteLoss {
        msp: f64,
        pop: f64,
        htp: f64,
        grad_norms: String,
    },
    #[error("evaluation set has no scorable targets")]
    EmptyEvalSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
