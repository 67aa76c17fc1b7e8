//! Core logic of the remote health monitor: accelerometer preprocessing, fall
//! and vital-sign anomaly detection, the wearable simulator, the ingest wire
//! codec, the time-series store, and the clinician assistant engine.
//!
//! Everything in this crate is synchronous and free of network I/O; the
//! `remoni-runtime` crate wires these pieces into the edge and cloud services.

pub mod bench;
pub mod domain;
pub mod edge;
pub mod fall;
pub mod nlp;
pub mod protocol;
pub mod replay;
pub mod signal;
pub mod sim;
pub mod store;
pub mod vitals;

pub use domain::{
    AccelSample, Activity, Alert, AlertDetail, AlertKind, Emotion, HealthyRange, Patient, Sign,
    SnapshotRef, Validate, ValidationError, VitalKind, VitalRanges, VitalSample,
};

use thiserror::Error;

/// Errors for loading configuration-style documents.
#[derive(Debug, Error)]
pub enum Error {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
