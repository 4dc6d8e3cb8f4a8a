use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

use aan_core::active_loop::LoopError;
use aan_core::dataset::DatasetError;
use aan_core::experiment::ExperimentError;
use aan_core::featurizer::FeatureError;
use aan_core::importance::ImportanceError;
use aan_core::network::NetworkError;

use crate::FaultPoint;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("stale query: {0}")]
    Stale(String),
    #[error("{0}")]
    Validation(String),
    #[error("injected fault at {0:?}")]
    Fault(FaultPoint),
    #[error("session storage: {0}")]
    Storage(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Stale(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Fault(_) | ServiceError::Storage(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Stale(_) => "stale_query",
            ServiceError::Validation(_) => "validation",
            ServiceError::Fault(_) => "fault",
            ServiceError::Storage(_) => "storage",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!("{self}");
        }
        let body = Json(json!({ "error": self.kind(), "message": self.to_string() }));
        (self.status(), body).into_response()
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<LoopError> for ServiceError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::InvalidLabel { .. }
            | LoopError::DuplicateId(_)
            | LoopError::MissingLabel(_) => ServiceError::Validation(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<DatasetError> for ServiceError {
    fn from(e: DatasetError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<FeatureError> for ServiceError {
    fn from(e: FeatureError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<ExperimentError> for ServiceError {
    fn from(e: ExperimentError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<NetworkError> for ServiceError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::InvalidConfig(_) => ServiceError::Validation(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<ImportanceError> for ServiceError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::Bounds { .. } => ServiceError::Validation(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}
