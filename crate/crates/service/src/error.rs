use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gsp_core::CoreError;
use gsp_render::RenderError;
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("rendering failed: {0}")]
    Render(#[from] RenderError),

    #[error("existing log does not match this configuration: {0}")]
    Mismatch(String),

    /// Persistence broke; the in-memory state may be ahead of the log, so
    /// the service refuses further commands until restarted.
    #[error("service halted: {0}")]
    Halted(String),

    #[error("{0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use CoreError as C;
        match self {
            ServiceError::Core(e) => match e {
                C::Auth(_) => StatusCode::UNAUTHORIZED,
                C::NotPrescreened(_) => StatusCode::FORBIDDEN,
                C::UnknownTrial(_) | C::UnknownRating(_) => StatusCode::NOT_FOUND,
                C::ExperimentClosed | C::DuplicateResponse(_) | C::DuplicateRating(_) | C::Phase(_) => {
                    StatusCode::CONFLICT
                }
                C::ChainComplete(_) => StatusCode::CONFLICT,
                C::Expired(_) => StatusCode::GONE,
                C::IndexOutOfRange { .. } | C::RatingRange(_) | C::Shape { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Render(RenderError::Busy) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Render(_) => StatusCode::BAD_GATEWAY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Mismatch(_) | ServiceError::Halted(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Short machine-readable name for the error body.
    pub fn kind(&self) -> &'static str {
        use CoreError as C;
        match self {
            ServiceError::Core(e) => match e {
                C::Auth(_) => "unknown-participant",
                C::NotPrescreened(_) => "not-prescreened",
                C::UnknownTrial(_) => "unknown-trial",
                C::UnknownRating(_) => "unknown-rating",
                C::ExperimentClosed => "experiment-closed",
                C::DuplicateResponse(_) => "duplicate-response",
                C::DuplicateRating(_) => "duplicate-rating",
                C::Phase(_) => "wrong-phase",
                C::ChainComplete(_) => "chain-complete",
                C::Expired(_) => "expired",
                C::IndexOutOfRange { .. } => "index-out-of-range",
                C::RatingRange(_) => "rating-out-of-range",
                C::CorruptLog { .. } => "corrupt-log",
                _ => "internal",
            },
            ServiceError::Render(RenderError::Busy) => "renderer-busy",
            ServiceError::Render(_) => "render-failed",
            ServiceError::Mismatch(_) => "log-mismatch",
            ServiceError::Halted(_) => "halted",
            ServiceError::BadRequest(_) => "bad-request",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}
