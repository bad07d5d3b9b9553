use hybridctl_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The body could not be parsed as the expected request.
    MalformedBody,
    /// Parsed, but a value is out of range or a combination is unsupported.
    InvalidInput,
    NumericalFailure,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::InvalidInput, message)
    }

    /// 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::MalformedBody | ErrorKind::InvalidInput | ErrorKind::NotFound => 2,
            ErrorKind::NumericalFailure | ErrorKind::Internal => 1,
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let kind = match e {
            CoreError::Domain(_) | CoreError::Usage(_) | CoreError::SingularSystem => ErrorKind::InvalidInput,
            CoreError::DegenerateVariance(_) | CoreError::Bracket { .. } | CoreError::NumericalFailure(_) => {
                ErrorKind::NumericalFailure
            }
        };
        Self::new(kind, e.to_string())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
