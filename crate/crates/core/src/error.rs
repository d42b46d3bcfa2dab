use std::io;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument is outside the operation's domain.
    #[error("usage error: {0}")]
    Usage(String),

    /// Bad configuration text, unknown key or invalid value.
    #[error("config error: {0}")]
    Config(String),

    /// The checkpoint file is malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFinite { iter: usize, detail: String },

    /// Image decoding or encoding failed.
    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}

pub(crate) use dim_err;
pub(crate) use usage_err;
