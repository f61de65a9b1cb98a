use cte_core::CteError;

/// Failure classes mapped one-to-one onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input/output error: {0}")]
    Io(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<CteError> for CliError {
    fn from(e: CteError) -> Self {
        let msg = e.to_string();
        match e {
            CteError::Config(_) | CteError::Dimension(_) => CliError::Config(msg),
            CteError::Divergence(_) => CliError::Divergence(msg),
            CteError::Io { .. }
            | CteError::Format(_)
            | CteError::Length { .. }
            | CteError::Data(_) => CliError::Io(msg),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
