//! Wearable-to-edge wire protocol.
//!
//! Every frame is a 4-byte big-endian payload length `N` followed by `N`
//! bytes of the frame's canonical JSON (`N <= 4 MiB`). The JSON object
//! carries its type in `"kind"`:
//!
//! ```text
//! {"kind":"hello","device_id":"w1","patient_id":"7","schema_version":"1"}
//! {"kind":"accel_batch","samples":[{"t":..,"x":..,"y":..,"z":..},..]}
//! {"kind":"vitals","sample":{"t":..,"temp":..,..}}
//! {"kind":"snapshot","snapshot":{"t":..,"patient_id":..,"mime":..,"media":"<base64>"}}
//! {"kind":"heartbeat"}
//! {"kind":"bye"}
//! ```
//!
//! Decoding never resynchronizes: the first malformed frame poisons the
//! session.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{validate_accel_stream, AccelSample, SnapshotRef, Validate, VitalSample};

pub const MAX_FRAME_LEN: usize = 4 * 1024 * 1024;
pub const SCHEMA_VERSION: &str = "1";
pub const DEFAULT_PORT: u16 = 7400;
const PREFIX: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the 4 MiB limit")]
    FrameTooLarge(usize),
    #[error("declared length {0} exceeds the 4 MiB limit")]
    LengthOverflow(u64),
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("unknown frame kind '{0}'")]
    UnknownKind(String),
    #[error("invalid {kind} frame: {reason}")]
    InvalidFrame { kind: FrameKind, reason: String },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("schema version '{got}' not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { got: String },
    #[error("decoder poisoned by an earlier error")]
    Poisoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Hello,
    AccelBatch,
    Vitals,
    Snapshot,
    Heartbeat,
    Bye,
}

impl FrameKind {
    pub const ALL: [FrameKind; 6] = [
        FrameKind::Hello,
        FrameKind::AccelBatch,
        FrameKind::Vitals,
        FrameKind::Snapshot,
        FrameKind::Heartbeat,
        FrameKind::Bye,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameKind::Hello => "hello",
            FrameKind::AccelBatch => "accel_batch",
            FrameKind::Vitals => "vitals",
            FrameKind::Snapshot => "snapshot",
            FrameKind::Heartbeat => "heartbeat",
            FrameKind::Bye => "bye",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Frame {
    Hello {
        device_id: String,
        patient_id: String,
        schema_version: String,
    },
    AccelBatch {
        samples: Vec<AccelSample>,
    },
    Vitals {
        sample: VitalSample,
    },
    Snapshot {
        snapshot: SnapshotRef,
    },
    Heartbeat,
    Bye,
}

impl Frame {
    pub fn hello(device_id: &str, patient_id: &str) -> Self {
        Frame::Hello {
            device_id: device_id.into(),
            patient_id: patient_id.into(),
            schema_version: SCHEMA_VERSION.into(),
        }
    }

    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::Hello { .. } => FrameKind::Hello,
            Frame::AccelBatch { .. } => FrameKind::AccelBatch,
            Frame::Vitals { .. } => FrameKind::Vitals,
            Frame::Snapshot { .. } => FrameKind::Snapshot,
            Frame::Heartbeat => FrameKind::Heartbeat,
            Frame::Bye => FrameKind::Bye,
        }
    }

    /// Checks that the body matches its kind.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let invalid = |reason: String| ProtocolError::InvalidFrame {
            kind: self.kind(),
            reason,
        };
        match self {
            Frame::Hello {
                device_id,
                patient_id,
                ..
            } => {
                if device_id.is_empty() || patient_id.is_empty() {
                    return Err(invalid("empty device_id or patient_id".into()));
                }
            }
            Frame::AccelBatch { samples } => {
                if samples.is_empty() {
                    return Err(invalid("empty batch".into()));
                }
                validate_accel_stream(samples).map_err(|e| invalid(e.to_string()))?;
            }
            Frame::Vitals { sample } => sample.validate().map_err(|e| invalid(e.to_string()))?,
            Frame::Snapshot { snapshot } => snapshot.validate().map_err(|e| invalid(e.to_string()))?,
            Frame::Heartbeat | Frame::Bye => {}
        }
        Ok(())
    }
}

/// Length-prefixed canonical JSON.
pub fn encode(frame: &Frame) -> Result<Vec<u8>, ProtocolError> {
    frame.validate()?;
    let payload = serde_json::to_vec(frame).expect("frames always serialize");
    if payload.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(PREFIX + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode_payload(payload: &[u8]) -> Result<Frame, ProtocolError> {
    let value: Value =
        serde_json::from_slice(payload).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::MalformedJson("missing string field 'kind'".into()))?;
    let Some(parsed) = FrameKind::parse(kind) else {
        return Err(ProtocolError::UnknownKind(kind.to_string()));
    };
    // Serde ignores extra fields on unit variants.
    if matches!(parsed, FrameKind::Heartbeat | FrameKind::Bye)
        && value.as_object().is_some_and(|o| o.len() > 1)
    {
        return Err(ProtocolError::MalformedJson(format!("unexpected fields in {kind}")));
    }
    let frame: Frame =
        serde_json::from_value(value).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    frame.validate()?;
    Ok(frame)
}

/// Incremental decoder for one connection.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Returns the next complete frame, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, ProtocolError> {
        if self.poisoned {
            return Err(ProtocolError::Poisoned);
        }
        if self.buf.len() < PREFIX {
            return Ok(None);
        }
        let declared = u32::from_be_bytes(self.buf[..PREFIX].try_into().expect("4 bytes")) as usize;
        if declared > MAX_FRAME_LEN {
            self.poisoned = true;
            return Err(ProtocolError::LengthOverflow(declared as u64));
        }
        if self.buf.len() < PREFIX + declared {
            return Ok(None);
        }
        let result = decode_payload(&self.buf[PREFIX..PREFIX + declared]);
        self.buf.drain(..PREFIX + declared);
        if result.is_err() {
            self.poisoned = true;
        }
        result.map(Some)
    }

    /// Bytes of an incomplete trailing frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

/// Decodes every complete frame in `bytes`; a trailing partial frame is ignored.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<Frame>, ProtocolError> {
    let mut d = FrameDecoder::new();
    d.feed(bytes);
    let mut frames = Vec::new();
    while let Some(f) = d.next_frame()? {
        frames.push(f);
    }
    Ok(frames)
}

/// Per-connection handshake and ordering rules.
#[derive(Debug, Default)]
pub struct Session {
    hello: Option<(String, String)>,
    closed: bool,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(device_id, patient_id)` once the hello has been accepted.
    pub fn peer(&self) -> Option<(&str, &str)> {
        self.hello.as_ref().map(|(d, p)| (d.as_str(), p.as_str()))
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn accept(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        if self.closed {
            return Err(ProtocolError::ProtocolViolation(format!(
                "{} frame after bye",
                frame.kind()
            )));
        }
        match (frame, &self.hello) {
            (
                Frame::Hello {
                    device_id,
                    patient_id,
                    schema_version,
                },
                None,
            ) => {
                if schema_version != SCHEMA_VERSION {
                    return Err(ProtocolError::SchemaVersion {
                        got: schema_version.clone(),
                    });
                }
                self.hello = Some((device_id.clone(), patient_id.clone()));
                Ok(())
            }
            (Frame::Hello { .. }, Some(_)) => {
                Err(ProtocolError::ProtocolViolation("repeated hello".into()))
            }
            (other, None) => Err(ProtocolError::ProtocolViolation(format!(
                "first frame must be hello, got {}",
                other.kind()
            ))),
            (Frame::Snapshot { snapshot }, Some((_, patient))) if &snapshot.patient_id != patient => {
                Err(ProtocolError::ProtocolViolation(format!(
                    "snapshot for patient {} on session of {patient}",
                    snapshot.patient_id
                )))
            }
            (Frame::Bye, Some(_)) => {
                self.closed = true;
                Ok(())
            }
            (_, Some(_)) => Ok(()),
        }
    }
}
