use alloc::string::String;

/// Failure modes shared by every stage of the lab.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_input {
    ($($arg:tt)*) => { $crate::Error::InvalidInput(alloc::format!($($arg)*)) };
}

macro_rules! invalid_config {
    ($($arg:tt)*) => { $crate::Error::InvalidConfig(alloc::format!($($arg)*)) };
}

macro_rules! numeric {
    ($($arg:tt)*) => { $crate::Error::Numeric(alloc::format!($($arg)*)) };
}

pub(crate) use {invalid_config, invalid_input, numeric};
