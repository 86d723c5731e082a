//! Pipeline library behind the `oodens` binary: configuration, run-directory
//! layout and the staged generation / training / dumping / evaluation /
//! landscape / theory / ablation workflow.

pub mod config;
pub mod layout;
pub mod pipeline;

use std::fmt;

/// CLI-level failure: either a usage problem (exit 2) or a propagated core
/// error (exit 3 for data problems, 4 for numeric ones).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(oodens_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<oodens_core::Error> for CliError {
    fn from(err: oodens_core::Error) -> Self {
        CliError::Core(err)
    }
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &CliError) -> i32 {
    use oodens_core::Error as E;
    match err {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Core(core) => match core {
            E::Diverged { .. }
            | E::CholeskyFailed { .. }
            | E::ProbitDomain(_)
            | E::NonFinite(_)
            | E::DegenerateEnsemble(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        },
    }
}
