//! Wearable emitter: streams a scenario's frames to an edge node, paced by
//! the scenario's speedup.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use remoni_core::domain::now_ms;
use remoni_core::protocol::{encode, ProtocolError};
use remoni_core::sim::{frame_plan, Scenario, ScenarioError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

/// How long to wait for the edge to close after `bye`.
const CLOSE_WAIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmitSummary {
    pub patient_id: String,
    pub start_ms: i64,
    /// Frames written, by kind.
    pub frames: BTreeMap<String, u64>,
    pub bytes: u64,
    pub wall_time_ms: f64,
}

impl EmitSummary {
    pub fn total_frames(&self) -> u64 {
        self.frames.values().sum()
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("disconnected mid-stream: {detail}")]
    MidStreamDisconnect { detail: String, partial: EmitSummary },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Fixes an unset start time to now.
pub fn anchored(scenario: &Scenario) -> Scenario {
    let mut s = scenario.clone();
    s.start_ms.get_or_insert_with(now_ms);
    s
}

pub async fn emit(scenario: &Scenario, endpoint: &str) -> Result<EmitSummary, EmitError> {
    scenario.validate()?;
    let s = anchored(scenario);
    let plan = frame_plan(&s);
    let encoded = plan
        .iter()
        .map(|tf| Ok((tf.t, tf.frame.kind().as_str(), encode(&tf.frame)?)))
        .collect::<Result<Vec<_>, ProtocolError>>()?;

    let mut stream = TcpStream::connect(endpoint)
        .await
        .map_err(|e| EmitError::ConnectionRefused(format!("{endpoint}: {e}")))?;
    let _ = stream.set_nodelay(true);
    let began = Instant::now();
    let mut summary = EmitSummary {
        patient_id: s.patient_id.clone(),
        start_ms: s.start(),
        ..Default::default()
    };
    for (t, kind, bytes) in encoded {
        let due = Duration::from_secs_f64(((t - s.start()).max(0) as f64 / 1000.0) / s.speedup);
        if let Some(wait) = due.checked_sub(began.elapsed()) {
            tokio::time::sleep(wait).await;
        }
        if let Err(e) = stream.write_all(&bytes).await {
            summary.wall_time_ms = began.elapsed().as_secs_f64() * 1000.0;
            return Err(EmitError::MidStreamDisconnect {
                detail: e.to_string(),
                partial: summary,
            });
        }
        *summary.frames.entry(kind.to_string()).or_default() += 1;
        summary.bytes += bytes.len() as u64;
    }
    let _ = stream.flush().await;
    // The edge closes its side once it has processed bye.
    let mut sink = [0u8; 256];
    let _ = tokio::time::timeout(CLOSE_WAIT, async {
        while let Ok(n) = stream.read(&mut sink).await {
            if n == 0 {
                break;
            }
        }
    })
    .await;
    summary.wall_time_ms = began.elapsed().as_secs_f64() * 1000.0;
    Ok(summary)
}
