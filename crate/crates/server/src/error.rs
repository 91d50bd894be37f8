use axum::Json;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use escrow_core::EscrowError;
use escrow_core::sharing_model::ModelError;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    pub fn unauthenticated(message: &str) -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthenticated", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidArgument", message)
    }
}

/// HTTP status for each escrow error. The code in the body tells errors
/// that share a status apart.
pub fn status_of(e: &EscrowError) -> StatusCode {
    use EscrowError::*;
    match e {
        BadCredentials => StatusCode::UNAUTHORIZED,
        NotASourceAgent { .. } | NotOwner { .. } | NotDestinationAgent | NotAuditor(_) | OwnerMismatch => {
            StatusCode::FORBIDDEN
        }
        UnknownAgent(_) | UnknownDataElement(_) | UnknownContract(_) | UnknownFunction(_) | ContentMissing(_) => {
            StatusCode::NOT_FOUND
        }
        Model(ModelError::UnknownAgent(_) | ModelError::UnknownDataElement(_)) => StatusCode::NOT_FOUND,
        AlreadyDecided { .. } | DuplicateKey(_) | ContractClosed(_) | DuplicateExternalId(_) | KeyMismatch(_) => {
            StatusCode::CONFLICT
        }
        NoMatchingContract(_) | ShortCircuited | FunctionFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
        InvalidArgument(_) | UnsupportedType(_) | NotCallable(_) | Model(_) => StatusCode::BAD_REQUEST,
        MissingKey(_) | PendingReplay => StatusCode::PRECONDITION_REQUIRED,
        Locked | Crashed | CorruptLog { .. } | BadCheckpoint(_) => StatusCode::SERVICE_UNAVAILABLE,
        DuplicateName(_) | HelperExposed(_) | KindMismatch(_) | AuthFailure | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EscrowError> for ApiError {
    fn from(e: EscrowError) -> Self {
        ApiError::new(status_of(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
