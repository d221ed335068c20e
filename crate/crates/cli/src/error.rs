use crowding_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot write JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl CliError {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => Self::CONFIG,
            CliError::Json(_) => Self::DATA,
            CliError::Core(e) => match e {
                CoreError::Divergence { .. } | CoreError::NonFinite(_) => Self::DIVERGENCE,
                CoreError::InvalidArgument(_) | CoreError::UnknownSymbol(_) | CoreError::Placement(_) => Self::CONFIG,
                _ => Self::DATA,
            },
        }
    }
}
