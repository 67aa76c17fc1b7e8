//! Networked services: edge node, cloud service, wearable emitter, and the
//! latency benchmark harness.

pub mod bench;
pub mod clients;
pub mod cloud;
pub mod edge;
pub mod emitter;
pub mod stack;

pub use reqwest::Client;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

/// JSON error body shared by both services: `{"error": kind, "detail": ...}`.
pub fn error_body(status: StatusCode, kind: &str, detail: &str) -> Response {
    (status, Json(serde_json::json!({ "error": kind, "detail": detail }))).into_response()
}

/// Trims a trailing slash so paths can be appended with `format!`.
pub fn base_url(url: &str) -> String {
    url.trim_end_matches('/').to_string()
}
