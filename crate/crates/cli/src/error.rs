use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<umoe::Error> for CliError {
    fn from(e: umoe::Error) -> Self {
        use umoe::Error as E;
        let msg = e.to_string();
        match e {
            E::Load { .. } | E::LoadFile(_) | E::Imputation(_) | E::Input(_) | E::Precondition(_) => CliError::Data(msg),
            E::Schema(_) | E::Dimension { .. } | E::Json(_) => CliError::Schema(msg),
            E::Fit(_) | E::Training { .. } | E::Internal(_) | E::Io(_) => CliError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
