use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error{}: {message}", position(*line, *column))]
    Config { line: Option<usize>, column: Option<usize>, message: String },

    #[error("{stage}: {source}")]
    Numerical {
        stage: String,
        #[source]
        source: uqdyn::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("artifact check failed: {0}")]
    Verify(String),
}

fn position(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Numerical { .. } => 3,
            HarnessError::Io { .. } | HarnessError::Verify(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

/// Attaches the pipeline stage to core errors.
pub trait Context<T> {
    fn stage(self, stage: &str) -> Result<T, HarnessError>;
}

impl<T> Context<T> for uqdyn::Result<T> {
    fn stage(self, stage: &str) -> Result<T, HarnessError> {
        self.map_err(|source| match source {
            uqdyn::Error::Io(e) => HarnessError::Io { path: stage.to_string(), source: e },
            source => HarnessError::Numerical { stage: stage.to_string(), source },
        })
    }
}
