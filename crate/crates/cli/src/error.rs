use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("multilevel run stopped at the level cap without reaching the bias target")]
    NotConverged,
}

impl CliError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            CliError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }

    /// Process exit code: 2 for bad input, 3 for non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged => 3,
            CliError::Invalid { .. } | CliError::Config { .. } | CliError::Io { .. } => 2,
        }
    }
}

impl From<apmc::Error> for CliError {
    fn from(e: apmc::Error) -> Self {
        match e.parameter() {
            Some(name) => CliError::Invalid {
                key: name.to_string(),
                reason: match &e {
                    apmc::Error::InvalidParameter { reason, .. } => reason.clone(),
                    other => other.to_string(),
                },
            },
            None => CliError::invalid("input", e.to_string()),
        }
    }
}
