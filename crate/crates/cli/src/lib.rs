//! Library side of the `radgraph-eval` command.
//!
//! - [`corpus`]: paired-report corpora in JSON-lines or tab-separated form.
//! - [`resources`]: graph and lexicon loading with content hashes.
//! - [`score`]: per-record MIRQI and captioning metrics plus aggregates.
//! - [`nncmd`]: gradient checks, overfit runs and report generation.
//!
//! Errors caused by bad input are wrapped in [`InputError`]; the binary
//! exits with status 2 for those and 1 for everything else.

pub mod corpus;
pub mod nncmd;
pub mod resources;
pub mod score;

use std::fmt;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for internal failures and failed checks.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for malformed or unreadable input.
pub const EXIT_INPUT: i32 = 2;

/// An error caused by the caller's input rather than by the program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Shorthand for `Err(InputError(..).into())`.
pub fn input_error<T>(message: impl Into<String>) -> anyhow::Result<T> {
    Err(InputError(message.into()).into())
}

/// Exit status for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<InputError>()) {
        EXIT_INPUT
    } else {
        EXIT_FAILURE
    }
}
