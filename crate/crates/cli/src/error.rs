use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),

    /// A request that breaks a composition rule; `rule` names it.
    #[error("{rule}: {detail}")]
    Invalid { rule: String, detail: String },

    #[error("{0}")]
    Internal(String),
}

/// JSON error body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    pub message: String,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (error, rule) = match self {
            ApiError::NotFound(_) => ("not_found", None),
            ApiError::Invalid { rule, .. } => ("invalid_composition", Some(rule.clone())),
            ApiError::Internal(_) => ("internal", None),
        };
        ErrorBody {
            error: error.into(),
            rule,
            message: self.to_string(),
        }
    }
}

impl From<regionmix::Error> for ApiError {
    fn from(e: regionmix::Error) -> Self {
        use regionmix::Error as E;
        match e {
            E::UnknownSource(id) => ApiError::NotFound(format!("unknown source id `{id}`")),
            E::InvalidComposition { rule, detail } => ApiError::Invalid {
                rule: rule.into(),
                detail,
            },
            E::Taxonomy(m) => ApiError::Invalid {
                rule: "known region".into(),
                detail: m,
            },
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
