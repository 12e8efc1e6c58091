//! Payloads exchanged with backend services.
//!
//! Each backend role runs as its own process or endpoint, so a request line
//! carries only the payload. The sampler, detector and parser payloads are
//! the core protocol types serialized as-is; this module adds the parse
//! request, the health reply and the error envelope shared by every route.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sentinel_core::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Sample,
    Detect,
    Parse,
    Health,
}

impl Route {
    pub fn path(self) -> &'static str {
        match self {
            Route::Sample => "/sample",
            Route::Detect => "/detect",
            Route::Parse => "/parse",
            Route::Health => "/health",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        match path.trim_end_matches('/') {
            "/sample" => Some(Route::Sample),
            "/detect" => Some(Route::Detect),
            "/parse" => Some(Route::Parse),
            "/health" => Some(Route::Health),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRequest {
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub ok: bool,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

impl From<&BackendError> for ErrorEnvelope {
    fn from(e: &BackendError) -> Self {
        Self { error: ErrorBody { kind: e.kind().to_string(), message: e.message().to_string() } }
    }
}

pub fn encode_error(e: &BackendError) -> String {
    serde_json::to_string(&ErrorEnvelope::from(e)).expect("error envelope serializes")
}

pub fn encode<T: Serialize>(payload: &T) -> String {
    serde_json::to_string(payload).expect("wire payloads serialize")
}

/// Decodes a reply line, turning an error envelope back into the backend
/// error it describes. Anything else that fails to parse is malformed.
pub fn decode_reply<T: DeserializeOwned>(body: &str) -> Result<T, BackendError> {
    if let Ok(env) = serde_json::from_str::<ErrorEnvelope>(body) {
        return Err(BackendError::from_kind(&env.error.kind, env.error.message));
    }
    serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("{e}: {}", snippet(body))))
}

pub fn decode_request<T: DeserializeOwned>(body: &str) -> Result<T, BackendError> {
    serde_json::from_str(body).map_err(|e| BackendError::InvalidRequest(e.to_string()))
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(120).map_or(s.len(), |(i, _)| i);
    &s[..end]
}
