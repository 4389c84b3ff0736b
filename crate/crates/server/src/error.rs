use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use brewtask_core::ingestion::IngestError;
use brewtask_core::storage::StoreError;
use brewtask_core::Error;
use serde::Serialize;

/// An error response: `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    use Error::*;
    match e {
        Validation(_) | Quality(_) | Analytics(_) | UnknownUnit(_) | InvalidGold(_) | MissingAnswerField { .. }
        | InvalidAnswer { .. } | UnexpectedUnit(_) | Config(_) => StatusCode::BAD_REQUEST,
        Ingest(IngestError::AdapterFailure(_)) => StatusCode::BAD_GATEWAY,
        Ingest(_) => StatusCode::BAD_REQUEST,
        Unauthenticated | InvalidCredentials => StatusCode::UNAUTHORIZED,
        Forbidden | NotEligible | NotReserver => StatusCode::FORBIDDEN,
        NotFound(_) | UnknownInstance => StatusCode::NOT_FOUND,
        NotDraft(_) | AlreadyPublished(_) | AlreadyHasData(_) | NoData(_) | JobNotOpen(_) | AlreadyReserved
        | NothingAvailable | AlreadySubmitted | DuplicateJudgment(_) | AlreadyCredited | NotSubmitted | SoldOut => {
            StatusCode::CONFLICT
        }
        ReservationExpired => StatusCode::GONE,
        InsufficientFunds { .. } => StatusCode::PAYMENT_REQUIRED,
        Store(StoreError::RetriesExhausted(_) | StoreError::Conflict) => StatusCode::SERVICE_UNAVAILABLE,
        Store(StoreError::Unavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
        Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = status_for(&e);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
