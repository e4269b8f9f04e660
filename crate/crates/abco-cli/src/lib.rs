//! The `abco` command: collect datasets, train, evaluate and tabulate runs,
//! with every artifact recorded in a manifest.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod table;

use std::path::{Path, PathBuf};

use args::{Cli, Command, FileConfig};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<abco::Error> for CliError {
    fn from(e: abco::Error) -> Self {
        match e {
            abco::Error::Io { path, source } => CliError::Io { path, source },
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Runs one parsed command line. Output lines go to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Collect(a) => commands::collect(a.merged(file.collect), out),
        Command::Train(a) => commands::train(a.merged(file.train), out),
        Command::Eval(a) => commands::eval(a.merged(file.eval), out),
        Command::Table(a) => table::table(a.merged(file.table), out),
    }
}
