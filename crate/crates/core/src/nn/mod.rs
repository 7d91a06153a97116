//! From-scratch tensor math and the dual-stream convolutional actor-critic
//! network: two conv stacks (observation and goal mask) whose flattened
//! features are concatenated and fed to a shared dense head producing a
//! policy distribution and a state value.

mod checkpoint;
mod conv;
mod gradcheck;
mod net;
mod tensor;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointSet, FORMAT_VERSION, MAGIC};
pub use conv::{conv2d, ConvGeometry};
pub use gradcheck::{grad_check, CoordCheck, GradCheckConfig, GradCheckReport, Objective};
pub use net::{
    backward, backward_batch_factored, backward_batch_into, backward_into, forward, Architecture, FactoredGrads,
    ForwardCache, ForwardOutput, Gradients,
    NetInput, NetworkParams, ShapePipeline, StreamLayout, HIDDEN_UNITS, INPUT_SIZE, NUM_ACTIONS,
};
pub use tensor::{log_softmax, softmax, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("dual-stream network needs a goal mask input")]
    MissingMask,
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("checkpoint has no network named {0:?}")]
    MissingNetwork(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[doc(hidden)]
pub mod bench_internals {
    pub use super::conv::{conv_backward, conv_forward, im2col, im2row};
    pub use super::tensor::{axpy, dot};
}
