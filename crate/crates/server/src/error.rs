use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use canvas_core::codec::FormatError;
use canvas_core::ModelError;
use canvas_runtime::{ExecuteCellError, SessionError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Wire shape of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    pub fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.status.as_u16(), self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        if e.is_not_found() {
            Self::not_found(e.to_string())
        } else {
            Self::invalid(e.to_string())
        }
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Terminated(_) => Self::conflict("environment-terminated", e.to_string()),
            SessionError::UnknownSession(_) => Self::not_found(e.to_string()),
            SessionError::ForkSource(_) => Self::invalid(e.to_string()),
            SessionError::Spawn(_) => Self::internal("worker-spawn-failed", e.to_string()),
            SessionError::Fork(_) => Self::internal("fork-failed", e.to_string()),
            SessionError::Worker(_) => Self::internal("worker-failed", e.to_string()),
        }
    }
}

impl From<ExecuteCellError> for ApiError {
    fn from(e: ExecuteCellError) -> Self {
        match e {
            ExecuteCellError::Model(m) => m.into(),
            ExecuteCellError::NotExecutable(_) => Self::invalid(e.to_string()),
            ExecuteCellError::AlreadyQueued(_) => Self::conflict("execution-conflict", e.to_string()),
            ExecuteCellError::Session(s) => s.into(),
        }
    }
}

/// JSON body extractor whose rejections use the structured error body.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(Body(value)),
            Err(rejection) => Err(rejection_error(rejection)),
        }
    }
}

fn rejection_error(rejection: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-body", rejection.body_text())
}
