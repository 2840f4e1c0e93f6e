//! Process exit codes and the mapping from errors to them.

use std::fmt;

pub const SUCCESS: i32 = 0;
pub const USAGE: i32 = 2;
pub const DATA: i32 = 3;
pub const NUMERICAL: i32 = 4;

/// A bad flag, key or value supplied by the user.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for an error: the first cause with a known kind decides.
pub fn code(err: &anyhow::Error) -> i32 {
    use adareg::error::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => USAGE,
                E::Io(_)
                | E::Format(_)
                | E::Geometry(_)
                | E::Domain(_)
                | E::DimensionMismatch { .. }
                | E::Denoiser(_) => DATA,
                E::Singular { .. } | E::Numerical(_) | E::State(_) => NUMERICAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    DATA
}
