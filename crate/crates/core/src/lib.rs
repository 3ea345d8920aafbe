//! Stochastic structural similarity training for desk-scale neural fields.
//!
//! The crate is organised as a pipeline: [`tensor`] provides a small
//! tape-based reverse-mode autodiff engine over `f64` arrays, [`rng`]
//! wraps a counter-derived deterministic stream generator, [`sampler`]
//! draws pixel minibatches and assembles stochastic patches, [`metrics`]
//! and [`losses`] implement the similarity measures and their
//! differentiable counterparts, [`field`] and [`scene`] define the two
//! toy regression tasks (2D image fields and volume-rendered radiance
//! fields), [`train`] runs the optimisation loop, and [`dataio`] handles
//! the on-disk formats (PPM images, CSV logs, binary checkpoints, scene
//! manifests).

use std::path::PathBuf;

pub mod dataio;
pub mod field;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod tensor;
pub mod train;

/// Crate-wide error type. Every fallible public function returns
/// [`Result`] with this error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("index {index} out of bounds for axis of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("cannot reshape {from:?} ({from_len} elements) to {to:?} ({to_len} elements)")]
    BadReshape {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("tape already consumed by a previous backward pass")]
    StaleTape,

    #[error("tensor is not tracked on the tape")]
    NotTracked,

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("bad batch size {batch}: {reason}")]
    BatchShape { batch: usize, reason: String },

    #[error("image {h}x{w} is smaller than the {window}x{window} window")]
    ImageTooSmall { h: usize, w: usize, window: usize },

    #[error("window weights sum to {sum:.17}, expected 1")]
    WeightNormalization { sum: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
