use crystalline::{ConfigError, RegistryError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown {0} `{1}`")]
    Unknown(&'static str, String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Whether the error comes from user-supplied parameters.
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Unknown(..) | HarnessError::Config(_) | HarnessError::Invalid(_))
    }
}
