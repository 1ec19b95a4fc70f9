use thiserror::Error;

/// CLI failures, each tied to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or arguments, including refused hypotheses. Exit 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Numerical failure during a run. Exit 3.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// A diagnostic or verification check failed. Exit 4.
    #[error("check failed: {0}")]
    Diagnostic(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Diagnostic(_) => 4,
        }
    }
}

impl From<edgeprior::Error> for CliError {
    fn from(e: edgeprior::Error) -> Self {
        use edgeprior::Error as E;
        match e {
            E::Numerical(_) | E::QuadratureNotConverged { .. } => CliError::Numeric(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            E::MeshMismatch { .. }
            | E::InvalidParameter { .. }
            | E::Dimension { .. }
            | E::Hypothesis(_)
            | E::Format(_)
            | E::Json(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
