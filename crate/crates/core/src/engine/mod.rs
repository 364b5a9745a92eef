//! Training, checkpointing, evaluation reports, prediction and overlay panels.

mod checkpoint;
mod config;
mod eval;
mod overlay;
mod predict;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use config::TrainConfig;
pub use eval::{evaluate, EvalReport, EvalRow};
pub use overlay::{render_overlay, CUP_COLOR, DISC_COLOR};
pub use predict::{
    predict, NetworkSegmenter, Prediction, Segmentation, Segmenter, ThresholdSegmenter,
};
pub use tensor::{decode_argmax, image_to_tensor, sample_target};
pub use train::{
    overfit_single, smoothed_loss_non_increasing, train, EpochRecord, History, OverfitReport,
    StopReason, TrainOutcome,
};

use thiserror::Error;

use crate::arch::ArchError;
use crate::data::DataError;
use crate::loss::LossError;
use crate::metrics::MetricsError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample `{id}` is {found:?}, network expects {expected:?}")]
    SampleShape {
        id: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("training diverged at epoch {epoch} (non-finite loss or gradient)")]
    Diverged {
        epoch: usize,
        last_good: Box<Checkpoint>,
    },
    #[error("checkpoint is incompatible: {0}")]
    Incompatible(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
