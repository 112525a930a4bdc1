use alloc::string::String;

/// Failure classes shared by every fallible operation in the crate.
///
/// The three kinds map one-to-one onto the CLI exit codes (2, 3, 4).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Shapes, channel counts, plans or variants that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data violating a documented contract (labels out of range,
    /// misaligned rasters, degenerate statistics).
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values appearing in a computation.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit status for command-line front ends.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::Error::Data(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use data_err;
