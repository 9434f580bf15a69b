use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh has zero extent (all vertices coincide)")]
    ZeroExtent,
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("invalid resolution {0}: must be in [2, 65535]")]
    InvalidResolution(u32),
    #[error("coordinate {value} is out of range for resolution {resolution}")]
    CoordinateOutOfRange { value: u32, resolution: u32 },
    #[error("malformed token stream: {0}")]
    MalformedTokens(String),
    #[error("empty token stream")]
    EmptyTokens,
    #[error("compression ratio is undefined for a mesh without faces")]
    NoFaces,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("requested {k} samples from {m} points")]
    TooManySamples { k: usize, m: usize },
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got {0} elements")]
    NonScalarLoss(usize),
    #[error("target {target} out of range for vocabulary of {vocab}")]
    TargetOutOfRange { target: usize, vocab: usize },
    #[error("sequence of {len} faces exceeds max_faces = {max}")]
    TooManyFaces { len: usize, max: usize },
    #[error("slot {0} is out of range (a face has 9 slots)")]
    SlotOutOfRange(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
