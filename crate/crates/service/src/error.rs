use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use simnet_core::api::ApiError;
use simnet_core::bundle::BundleError;
use simnet_core::decision::DecisionError;
use simnet_core::session::SessionError;

/// Error response: a status and an `{code, message, path}` body.
#[derive(Debug, Clone)]
pub struct ServiceError {
    pub status: StatusCode,
    pub body: ApiError,
}

impl ServiceError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ServiceError {
            status,
            body: ApiError {
                code: code.to_string(),
                message: message.into(),
                path: None,
            },
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.body.path = Some(path.into());
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} `{id}`"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

impl From<BundleError> for ServiceError {
    fn from(e: BundleError) -> Self {
        let status = match e {
            BundleError::Schema { .. } => StatusCode::BAD_REQUEST,
            BundleError::Inconsistent(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let err = ServiceError::new(status, e.code(), e.to_string());
        match e.path() {
            Some(p) => err.with_path(p),
            None => err,
        }
    }
}

impl From<SessionError> for ServiceError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::AlreadyObserved(_) | SessionError::NotObserved(_) | SessionError::NoUtilities => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ServiceError::new(status, e.code(), e.to_string())
    }
}

impl From<DecisionError> for ServiceError {
    fn from(e: DecisionError) -> Self {
        SessionError::from(e).into()
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
