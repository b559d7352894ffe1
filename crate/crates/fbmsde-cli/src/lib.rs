//! Experiment harness around `fbmsde`: TOML run configs, subcommand
//! dispatch and reproducible CSV / plot-data output.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{execute, run, Outputs, RunOptions};
pub use config::{config_schema, Command, RunConfig};
pub use table::{emit_plotdata, Cell, Provenance, ResultTable, TableError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Numerics(#[from] fbmsde::Error),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for anything the user can fix in the config, 2 for numerical or
    /// I/O failures.
    pub fn exit_code(&self) -> i32 {
        use fbmsde::Error as E;
        match self {
            CliError::Parse(_) | CliError::Config { .. } => 1,
            CliError::Numerics(E::Domain(_) | E::InvalidParameter { .. } | E::Constraint(_) | E::Unsupported(_)) => 1,
            CliError::Numerics(_) | CliError::Table(_) | CliError::Io(_) => 2,
        }
    }
}
