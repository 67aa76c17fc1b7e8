//! Edge-node state machines: the per-connection detection pipeline, the
//! latest-data cache, and upload batch assembly. Transport lives in the
//! runtime crate.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AccelSample, Alert, SnapshotRef, VitalSample};
use crate::fall::{Detector, FallScore};
use crate::protocol::Frame;
use crate::signal::{normalize, Resampler, Window, Windower, TARGET_HZ, WINDOW_LEN, WINDOW_STRIDE};
use crate::store::UploadBatch;
use crate::vitals::{GuardConfig, VitalsGuard};

pub const DEFAULT_UPLOAD_PERIOD_S: u64 = 60;
pub const DEFAULT_INSTANT_PORT: u16 = 7401;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown patient {0}")]
pub struct UnknownPatient(pub String);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latest {
    pub vitals: Option<VitalSample>,
    pub snapshot: Option<SnapshotRef>,
    pub fall_score: Option<FallScore>,
    pub last_update: i64,
}

/// Instant-data answer for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantData {
    pub patient_id: String,
    pub vitals: Option<VitalSample>,
    pub snapshot: Option<SnapshotRef>,
    pub fall_score: Option<FallScore>,
    pub t: i64,
    pub staleness_ms: i64,
}

/// Latest readings per patient. Writers swap a whole [`Latest`] so readers
/// never observe fields from different updates.
#[derive(Debug, Default)]
pub struct LatestCache {
    inner: RwLock<HashMap<String, Arc<Latest>>>,
}

impl LatestCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies `f` to a copy of the patient's entry and publishes it. `t` is
    /// the update's data time; the entry's `last_update` never decreases.
    pub fn update(&self, patient_id: &str, t: i64, f: impl FnOnce(&mut Latest)) {
        let mut map = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let mut next = map.get(patient_id).map(|l| (**l).clone()).unwrap_or_default();
        f(&mut next);
        next.last_update = next.last_update.max(t);
        map.insert(patient_id.to_string(), Arc::new(next));
    }

    pub fn get(&self, patient_id: &str) -> Option<Arc<Latest>> {
        self.inner
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(patient_id)
            .cloned()
    }

    pub fn instant(&self, patient_id: &str, now: i64) -> Result<InstantData, UnknownPatient> {
        let l = self.get(patient_id).ok_or_else(|| UnknownPatient(patient_id.into()))?;
        Ok(InstantData {
            patient_id: patient_id.into(),
            vitals: l.vitals,
            snapshot: l.snapshot.clone(),
            fall_score: l.fall_score,
            t: l.last_update,
            staleness_ms: now - l.last_update,
        })
    }

    pub fn patients(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .inner
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        v.sort();
        v
    }
}

/// Data destined for periodic upload.
#[derive(Debug, Clone, PartialEq)]
pub enum Upload {
    Vitals(VitalSample),
    Snapshot(SnapshotRef),
}

impl Upload {
    pub fn t(&self) -> i64 {
        match self {
            Upload::Vitals(v) => v.t,
            Upload::Snapshot(s) => s.t,
        }
    }
}

/// What one frame produced. Alerts must be dispatched before uploads are
/// handed to batching.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FrameOutcome {
    pub alerts: Vec<Alert>,
    pub uploads: Vec<Upload>,
    pub scores: Vec<FallScore>,
    /// Latest data time carried by the frame.
    pub t: Option<i64>,
}

/// Detection state for one ingest session (one patient).
pub struct Pipeline {
    patient_id: String,
    detector: Arc<Detector>,
    resampler: Resampler,
    windower: Windower,
    guard: VitalsGuard,
    last_positive_end: Option<i64>,
    last_accel_t: Option<i64>,
}

impl Pipeline {
    pub fn new(patient_id: &str, detector: Arc<Detector>, guard: GuardConfig) -> Self {
        Self {
            patient_id: patient_id.into(),
            detector,
            resampler: Resampler::new(TARGET_HZ),
            windower: Windower::new(patient_id, WINDOW_LEN, WINDOW_STRIDE),
            guard: VitalsGuard::new(guard),
            last_positive_end: None,
            last_accel_t: None,
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Runs one accepted frame through detection and updates the cache.
    /// `now` stamps `t_detected` on alerts.
    pub fn on_frame(&mut self, frame: &Frame, cache: &LatestCache, now: impl Fn() -> i64) -> FrameOutcome {
        let mut out = FrameOutcome::default();
        match frame {
            Frame::AccelBatch { samples } => {
                for w in self.accel(samples) {
                    let score = self.detector.score(&w);
                    out.scores.push(score);
                    if score.is_fall {
                        let overlaps = self.last_positive_end.is_some_and(|end| w.t_start <= end);
                        self.last_positive_end = Some(w.t_end());
                        if !overlaps {
                            out.alerts.push(Alert::fall(&self.patient_id, &score, now()));
                        }
                    }
                }
                out.t = samples.last().map(|s| s.t);
                if let Some(t) = out.t {
                    let last = out.scores.last().copied();
                    cache.update(&self.patient_id, t, |l| {
                        if last.is_some() {
                            l.fall_score = last;
                        }
                    });
                }
            }
            Frame::Vitals { sample } => {
                out.alerts = self.guard.observe(&self.patient_id, sample, now());
                out.uploads.push(Upload::Vitals(*sample));
                out.t = Some(sample.t);
                cache.update(&self.patient_id, sample.t, |l| l.vitals = Some(*sample));
            }
            Frame::Snapshot { snapshot } => {
                out.uploads.push(Upload::Snapshot(snapshot.clone()));
                out.t = Some(snapshot.t);
                cache.update(&self.patient_id, snapshot.t, |l| l.snapshot = Some(snapshot.clone()));
            }
            Frame::Hello { .. } => cache.update(&self.patient_id, i64::MIN, |_| {}),
            Frame::Heartbeat | Frame::Bye => {}
        }
        out
    }

    fn accel(&mut self, raw: &[AccelSample]) -> Vec<Window> {
        let mut resampled = Vec::new();
        for s in normalize(raw) {
            if self.last_accel_t.is_some_and(|t| s.t <= t) {
                log::warn!("edge: {} dropping out-of-order sample t={}", self.patient_id, s.t);
                continue;
            }
            self.last_accel_t = Some(s.t);
            if let Err(e) = self.resampler.push(s, &mut resampled) {
                log::warn!("edge: {} resample: {e}", self.patient_id);
            }
        }
        resampled.into_iter().filter_map(|s| self.windower.push(s)).collect()
    }
}

#[derive(Debug, Clone)]
struct OpenInterval {
    t_from: i64,
    vitals: Vec<VitalSample>,
    snapshots: Vec<SnapshotRef>,
}

/// Cuts each patient's upload stream into consecutive half-open intervals of
/// one period, anchored at the first item. Empty intervals are not emitted.
#[derive(Debug)]
pub struct BatchAssembler {
    period_ms: i64,
    open: HashMap<String, OpenInterval>,
    /// End of the last flushed interval per patient.
    closed_to: HashMap<String, i64>,
}

impl BatchAssembler {
    pub fn new(period_ms: i64) -> Self {
        assert!(period_ms > 0, "upload period must be positive");
        Self {
            period_ms,
            open: HashMap::new(),
            closed_to: HashMap::new(),
        }
    }

    pub fn period_ms(&self) -> i64 {
        self.period_ms
    }

    /// Closes every interval of the patient that ends at or before `t`.
    pub fn advance(&mut self, patient_id: &str, t: i64) -> Vec<UploadBatch> {
        let mut out = Vec::new();
        while let Some(open) = self.open.get_mut(patient_id) {
            let t_to = open.t_from + self.period_ms;
            if t < t_to {
                break;
            }
            let batch = Self::finish(patient_id, open, t_to);
            open.t_from = t_to;
            self.closed_to.insert(patient_id.into(), t_to);
            if !batch.is_empty() {
                out.push(batch);
            }
        }
        out
    }

    pub fn push(&mut self, patient_id: &str, item: Upload) -> Vec<UploadBatch> {
        let t = item.t();
        let out = self.advance(patient_id, t);
        let floor = self.closed_to.get(patient_id).copied();
        if floor.is_some_and(|f| t < f) {
            log::warn!("edge: {patient_id} item at t={t} precedes uploaded interval; dropped");
            return out;
        }
        let open = self.open.entry(patient_id.into()).or_insert_with(|| OpenInterval {
            t_from: t,
            vitals: Vec::new(),
            snapshots: Vec::new(),
        });
        match item {
            Upload::Vitals(v) => open.vitals.push(v),
            Upload::Snapshot(s) => open.snapshots.push(s),
        }
        out
    }

    /// Closes the patient's current interval as a full period.
    pub fn flush(&mut self, patient_id: &str) -> Option<UploadBatch> {
        let mut open = self.open.remove(patient_id)?;
        let t_to = open.t_from + self.period_ms;
        self.closed_to.insert(patient_id.into(), t_to);
        let batch = Self::finish(patient_id, &mut open, t_to);
        (!batch.is_empty()).then_some(batch)
    }

    pub fn flush_all(&mut self) -> Vec<UploadBatch> {
        let mut ids: Vec<String> = self.open.keys().cloned().collect();
        ids.sort();
        ids.iter().filter_map(|p| self.flush(p)).collect()
    }

    fn finish(patient_id: &str, open: &mut OpenInterval, t_to: i64) -> UploadBatch {
        let mut b = UploadBatch::new(patient_id, open.t_from, t_to);
        b.vitals = std::mem::take(&mut open.vitals);
        b.snapshots = std::mem::take(&mut open.snapshots);
        b
    }
}

impl UploadBatch {
    /// Union of two batches of one patient covering adjacent intervals.
    pub fn merge(mut self, next: UploadBatch) -> UploadBatch {
        debug_assert_eq!(self.patient_id, next.patient_id);
        self.t_from = self.t_from.min(next.t_from);
        self.t_to = self.t_to.max(next.t_to);
        self.batch_id = format!("{}:{}-{}", self.patient_id, self.t_from, self.t_to);
        self.vitals.extend(next.vitals);
        self.snapshots.extend(next.snapshots);
        self.vitals.sort_by_key(|v| v.t);
        self.snapshots.sort_by_key(|s| s.t);
        self
    }
}
