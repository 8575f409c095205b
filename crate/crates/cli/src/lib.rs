//! Command implementations behind the `stratkit` binary.
//!
//! Each command is split into a pure function over parsed inputs (used by the
//! tests) and a thin wrapper that reads and writes files.

pub mod assign;
pub mod estimate;
pub mod oracle;
pub mod simulate;
pub mod table;

use std::path::PathBuf;

pub use assign::{assign_table, cmd_assign, AssignArgs, AssignOutput, BlockMethod};
pub use estimate::{cmd_estimate, estimate_table, EstimateArgs, EstimateReport};
pub use oracle::{cmd_oracle, OracleArgs, OracleChoice};
pub use simulate::{cmd_simulate, RunConfig, SimulateOutcome, SCHEMA_VERSION};
pub use table::Table;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: covariate '{column}' is not numeric: '{value}'")]
    NonNumericCovariate { column: String, row: usize, value: String },
    #[error("row {row}: column '{column}' is not numeric: '{value}'")]
    NonNumericValue { column: String, row: usize, value: String },
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] stratkit::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}
