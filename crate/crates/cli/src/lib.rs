//! Pieces of the `ncell` command-line tool: output handling, run manifests,
//! SVG plots and the subcommands themselves.

use thiserror::Error;

pub mod commands;
pub mod manifest;
pub mod output;
pub mod plot;

/// Environment variable naming the root for relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "NCELL_OUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or unreadable input; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Input that could not be parsed; exit code 2.
    #[error("{0}")]
    Parse(String),
    /// Inputs that parse but violate a model constraint, or a failed run;
    /// exit code 1.
    #[error("{0}")]
    Domain(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => 2,
            CliError::Domain(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn domain(e: impl std::fmt::Display) -> CliError {
        CliError::Domain(e.to_string())
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

/// Run `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}
