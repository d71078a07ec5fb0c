use std::io;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Query, Request};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use storyloom::genai::jobs::JobError;
use storyloom::genai::prompts::TemplateError;
use storyloom::genai::GenError;
use storyloom::playback::PlaybackError;
use storyloom::screenplay::CompileError;
use storyloom::store::StoreError;
use storyloom::storyboard::GraphError;
use storyloom::timeline::TimelineError;
use thiserror::Error;

/// Failures that stop the service from starting.
#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("server stopped: {0}")]
    Serve(io::Error),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::Bind { .. } => "BindError",
            ServerError::BadConfig(_) => "BadConfig",
            ServerError::Serve(_) => "IOError",
        }
    }
}

/// An error response: `{"error": {"code", "message", "details"?}}`.
///
/// `code` is the error code of the module that failed, unchanged.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Option<Value>,
}

pub type ApiResult<T> = Result<T, ApiError>;

fn status_for(code: &str) -> StatusCode {
    match code {
        "BadRequest" => StatusCode::BAD_REQUEST,
        "Unauthorized" => StatusCode::UNAUTHORIZED,
        "UnknownStory" | "UnknownScene" | "UnknownElement" | "UnknownClip" | "UnknownEdge" | "UnknownAsset"
        | "UnknownJob" | "UnknownSession" | "UnknownChat" | "UnknownTemplate" | "UnknownVoice" | "PackageNotFound" => {
            StatusCode::NOT_FOUND
        }
        "StoryExists" | "InvalidTransition" | "NotPlaying" | "NotAwaitingInput" | "AmbiguousSuccessor"
        | "DuplicateEdge" | "RemovingStartScene" => StatusCode::CONFLICT,
        "QueueFull" => StatusCode::SERVICE_UNAVAILABLE,
        "ProviderError" => StatusCode::BAD_GATEWAY,
        "IOError" | "StoreError" | "Internal" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status_for(code),
            code: code.to_string(),
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BadRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(details) = self.details {
            error["details"] = details;
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<TimelineError> for ApiError {
    fn from(e: TimelineError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<GenError> for ApiError {
    fn from(e: GenError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<CompileError> for ApiError {
    fn from(e: CompileError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let base = ApiError::new(e.code(), e.to_string());
        match &e {
            StoreError::InvalidStory(violations) => base.with_details(json!({ "violations": violations })),
            _ => base,
        }
    }
}

impl From<PlaybackError> for ApiError {
    fn from(e: PlaybackError) -> Self {
        let base = ApiError::new(e.code(), e.to_string());
        match &e {
            PlaybackError::InvalidStory { violations } => base.with_details(json!({ "violations": violations })),
            _ => base,
        }
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        let code = match e {
            TemplateError::UnknownField { .. } => "UnknownField",
            TemplateError::EmptyPrompt(_) => "EmptyPrompt",
            TemplateError::UnknownTemplate(_) => "UnknownTemplate",
        };
        ApiError::new(code, e.to_string())
    }
}

/// `Json` whose rejections use the error envelope.
#[derive(Debug, Clone, Copy, Default)]
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
    ApiError::bad_request(rejection.body_text())
}

/// Query string extractor with the same rejection envelope as [`Body`].
pub struct Params<T>(pub T);

impl<S, T> FromRequestParts<S> for Params<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        match Query::<T>::from_request_parts(parts, state).await {
            Ok(Query(value)) => Ok(Params(value)),
            Err(rejection) => Err(ApiError::bad_request(rejection.body_text())),
        }
    }
}
