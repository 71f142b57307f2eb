use alloc::string::String;

use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("zero sigma at step {step} but residual {residual:e} exceeds tolerance")]
    EncodeSingularity { step: usize, residual: f64 },
    #[error("unknown vocabulary entry: {0}")]
    Vocabulary(String),
    #[error("world construction failed: {0}")]
    WorldConstruction(String),
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Parameter(alloc::format!($($arg)*))
    };
}
pub(crate) use param_err;
