use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("unknown experiment kind `{0}`")]
    NotFound(String),

    #[error("{kind} failed: {source}")]
    Solver {
        kind: &'static str,
        #[source]
        source: metamorph::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything wrong with the inputs, 3 for a solver that did not
    /// converge, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use metamorph::Error as E;
        match self {
            CliError::Config(_) | CliError::Validation { .. } | CliError::NotFound(_) => 2,
            CliError::Solver { source, .. } => match source {
                E::NonConvergence { .. } => 3,
                E::InvalidParameter { .. } | E::ShapeMismatch { .. } | E::UnsupportedOrder { .. } | E::Parse(_) => 2,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) trait SolverContext<T> {
    fn during(self, kind: &'static str) -> Result<T>;
}

impl<T> SolverContext<T> for metamorph::Result<T> {
    fn during(self, kind: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Solver { kind, source })
    }
}
