//! Dtype-aware tensors, low-precision emulation, input materialization and the archive format.

mod archive;
mod dtype;
mod materialize;
pub mod quant;
#[allow(clippy::module_inception)]
mod tensor;

use thiserror::Error;

pub use archive::{read_archive, read_archive_prefix, write_archive, TensorArchive};
pub use dtype::DType;
pub use materialize::{
    input_rng, materialize_input, random_tensor, seed_base_for, ArchiveStore, INT_RANDOM_UPPER,
};
pub use tensor::{numel, Buffer, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected shape {expected:?}, found {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("expected dtype {expected}, found {actual}")]
    DTypeMismatch { expected: DType, actual: DType },
    #[error("value {value} not representable as {dtype}")]
    OutOfRange { value: f64, dtype: DType },
    #[error("archive has no tensor named `{0}`")]
    ArchiveMissingKey(String),
    #[error("corrupt archive header: {0}")]
    CorruptHeader(String),
    #[error("archive truncated: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Free-function form of [`Tensor::quantize`].
pub fn quantize(t: &Tensor, target: DType) -> Tensor {
    t.quantize(target)
}
