use alloc::string::String;

/// Errors produced by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes or lengths do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A caller broke an operation's precondition (non-binary targets,
    /// zero vectors, mismatched parameter structure, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration values.
    #[error("invalid config: {0}")]
    Config(String),
    /// Malformed or empty data.
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}

pub(crate) use {config_err, contract_err, data_err, dim_err};
