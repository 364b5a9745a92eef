//! Declarative network description, shape inference and parameter audit.
//!
//! A [`NetworkSpec`] lists every layer of the encoder-decoder by name with
//! its hyperparameters and the skip wiring between encoder and decoder. The
//! spec is the single source of truth: the trainable model in [`crate::nn`]
//! is compiled from it, [`infer_shapes`] validates it, and
//! [`audit_against_tables`] compares its parameter counts with the published
//! layer tables kept in [`tables`].

mod audit;
mod shapes;
mod spec;
pub mod tables;

pub use audit::{audit_against_tables, AuditRow, ParamAudit, ShapeDiscrepancy};
pub use shapes::{infer_shapes, LayerKind, ShapeTrace, TraceEntry};
pub use spec::{
    count_parameters, default_network_spec, ConvLayerSpec, DecoderBlockSpec, EncoderBlockSpec,
    FoldSpec, GroupedConvLayerSpec, HeadSpec, LayerRef, NetworkSpec, PoolLayerSpec, SkipMode,
    SkipPath, TensorShape, UnpoolLayerSpec, NUM_BLOCKS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("input {height}x{width} is not divisible by 32 (five 2x2 poolings)")]
    InputNotDivisible { height: usize, width: usize },
    #[error("tensor dimensions must be strictly positive, got {0}")]
    ZeroDimension(TensorShape),
    #[error("num_classes must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("layer `{layer}` expects {expected} input channels but receives {found}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("layer `{layer}`: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("skip path from encoder block {source_block} is invalid: {reason}")]
    InvalidSkip { source_block: usize, reason: String },
    #[error("input shape {found} does not match the spec input {expected}")]
    InputMismatch {
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("failed to parse network spec: {0}")]
    Parse(String),
}
