//! Configuration, CSV output and command pipelines behind the
//! `coop-privacy` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod reproduce;

use coop_privacy::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Index(_) | Error::Lookup(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Capacity(_) => 3,
        Error::Solver(_) | Error::Contract(_) => 1,
    }
}

/// Exit status when a DP certification finds a violation.
pub const DP_FAILURE: i32 = 4;
