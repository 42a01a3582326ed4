//! Error taxonomy shared by every module.
//!
//! The variants mirror the failure classes the command-line tool must map to
//! exit codes: configuration problems, structural-hypothesis violations,
//! numerical breakdowns, and verifications that terminate without a verdict.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (bad schema, bad value).
    #[error("configuration error: {0}")]
    Config(String),

    /// A structural hypothesis required by the requested operation fails,
    /// or the model/shock data lies outside the supported class.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// A numerical procedure broke down (divergence, blow-up, no connection,
    /// singular system, underflow in a fit window, ...).
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// A verification ran to completion but could not reach a clean verdict
    /// (e.g. non-integer phase accumulation after maximal refinement).
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed data file (CSV/JSON import).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code contract: 0 success, 2 config, 3 inconclusive,
    /// 4 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Inconclusive(_) => 3,
            _ => 4,
        }
    }
}
