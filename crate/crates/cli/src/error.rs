use std::fmt;

use thiserror::Error;

/// One problem found while reading a scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(Issue),

    #[error("invalid scenario:\n{}", join(.0))]
    Validation(Vec<Issue>),

    #[error(transparent)]
    Solver(#[from] ccflow::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn join(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;
pub const EXIT_NOT_CONVERGED: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation(_) => EXIT_INVALID,
            CliError::Solver(e) => match e.root() {
                ccflow::Error::InvalidGraph(_)
                | ccflow::Error::InvalidProblem(_)
                | ccflow::Error::InvalidParameter(_)
                | ccflow::Error::Dimension { .. }
                | ccflow::Error::Disconnected
                | ccflow::Error::InconsistentPattern { .. } => EXIT_INVALID,
                _ => EXIT_SOLVER,
            },
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => 1,
        }
    }
}
