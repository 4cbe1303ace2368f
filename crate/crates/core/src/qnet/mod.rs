//! Implicit quantile network with a self-contained reverse-mode core.
//!
//! Parameters live in one flat `f64` vector so subgroup gradients can be
//! sliced by layer; the output layer always occupies the tail.

mod checkpoint;
mod network;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMetadata, CHECKPOINT_VERSION,
};
pub use network::{
    embed_tau, ForwardTrace, HeadKind, InputScale, LayerSlice, Network, NetworkSpec, ParamLayout, FEATURE_HIDDEN,
    FEATURE_IN, HEAD_HIDDEN, OUTPUT, TAU_EMBED,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("non-finite parameter in layer {layer}")]
    NonFinite { layer: String },
    #[error("tau {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}
