use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Operand shapes are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A scalar hyperparameter (stride, keep probability, ...) is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// The caller violated an API contract, e.g. backward on a non-scalar.
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::TensorError::Dimension(format!($($arg)*))
    };
}

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::TensorError::Parameter(format!($($arg)*))
    };
}

pub(crate) use dim_err;
pub(crate) use param_err;
