use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VistaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VistaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON. `line` and `column` are 1-based as reported by the parser.
    #[error("{context}: parse error at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// One or more invariant violations. Loaders collect every problem they
    /// find instead of stopping at the first.
    #[error("{context}: {} validation error(s):\n  {}", .problems.len(), .problems.join("\n  "))]
    Validation {
        context: String,
        problems: Vec<String>,
    },

    #[error("tensor container: {0}")]
    Tensor(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("instance too large for brute-force evaluation: {0}")]
    TooLarge(String),
}

impl VistaError {
    pub fn invalid(context: impl Into<String>, problem: impl Into<String>) -> Self {
        VistaError::Validation {
            context: context.into(),
            problems: vec![problem.into()],
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VistaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_json(context: impl Into<String>, err: &serde_json::Error) -> Self {
        VistaError::Parse {
            context: context.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    /// Process exit code used by the command-line tool: 1 for I/O,
    /// 2 for malformed or invalid input, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            VistaError::Io { .. } => 1,
            VistaError::Parse { .. } | VistaError::Validation { .. } | VistaError::Tensor(_) => 2,
            VistaError::Dimension(_) => 2,
            VistaError::TooLarge(_) => 3,
        }
    }
}

/// Accumulates validation problems so that callers can report all of them.
#[derive(Debug, Default)]
pub(crate) struct Problems(Vec<String>);

impl Problems {
    pub fn push(&mut self, problem: impl Into<String>) {
        self.0.push(problem.into());
    }

    pub fn into_result(self, context: impl Into<String>) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(VistaError::Validation {
                context: context.into(),
                problems: self.0,
            })
        }
    }
}
