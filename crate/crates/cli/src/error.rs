use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rndop_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration errors, 3 when no feasible placement exists, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use rndop_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Infeasible { .. } | E::CapExhausted { .. } | E::NoFeasibleInit | E::ZeroFeasible) => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "infeasible",
            _ => match self {
                CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => "io",
                _ => "runtime",
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
