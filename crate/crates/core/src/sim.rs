//! Scriptable wearable and camera stand-in.
//!
//! A [`Scenario`] fully determines the synthesized streams: 238 Hz ±8 g
//! accelerometry with fall and activity signatures, periodic vitals with
//! scheduled excursions, and placeholder snapshot images whose embedded text
//! names the scripted activity and emotion.
//!
//! Fall signature, in acceleration magnitude: a free-fall dip (≤ 0.4 g,
//! 300 ms), a half-sine impact (peak 3–6 g, 40–80 ms), then stillness
//! (σ 0.01 g, ≥ 1.5 s) with gravity along a new orientation. Impact centers
//! are placed on the 32 Hz detector grid measured from the scenario start.

use std::io::Cursor;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{day_start_ms, AccelSample, Activity, Emotion, Sign, SnapshotRef, VitalSample, RAW_RANGE_G};
use crate::protocol::Frame;
use crate::signal::{SOURCE_HZ, TARGET_HZ};
use crate::store::UploadBatch;

pub const BATCH_MS: i64 = 250;
const REST_SIGMA_G: f64 = 0.05;
const STILL_SIGMA_G: f64 = 0.01;
const LABEL_KEY: &str = "label";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub mean: f64,
    pub std: f64,
}

const fn jitter(mean: f64, std: f64) -> Jitter {
    Jitter { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Baseline {
    pub temp: Jitter,
    pub hr: Jitter,
    pub rr: Jitter,
    pub sys: Jitter,
    pub dia: Jitter,
    pub spo2: Jitter,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            temp: jitter(36.85, 0.05),
            hr: jitter(72.0, 2.0),
            rr: jitter(16.0, 0.5),
            sys: jitter(110.0, 2.0),
            dia: jitter(70.0, 1.5),
            spo2: jitter(98.0, 0.4),
        }
    }
}

impl Baseline {
    fn get(&self, sign: Sign) -> Jitter {
        match sign {
            Sign::Temp => self.temp,
            Sign::Hr => self.hr,
            Sign::Rr => self.rr,
            Sign::Sys => self.sys,
            Sign::Dia => self.dia,
            Sign::Spo2 => self.spo2,
        }
    }
}

/// Optional overrides; unset fields are drawn from the scenario seed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FallParams {
    pub peak_g: Option<f64>,
    pub width_ms: Option<f64>,
    pub dip_g: Option<f64>,
    pub stillness_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivityParams {
    pub sigma_g: Option<f64>,
    pub emotion: Option<Emotion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Fall {
        t_s: f64,
        #[serde(default)]
        params: FallParams,
    },
    VitalExcursion {
        t_s: f64,
        sign: Sign,
        value: f64,
        hold_s: f64,
    },
    Activity {
        t_s: f64,
        name: String,
        duration_s: f64,
        #[serde(default)]
        params: ActivityParams,
    },
}

impl Event {
    pub fn t_s(&self) -> f64 {
        match self {
            Event::Fall { t_s, .. } | Event::VitalExcursion { t_s, .. } | Event::Activity { t_s, .. } => {
                *t_s
            }
        }
    }
}

fn default_speedup() -> f64 {
    1.0
}
fn default_vitals_period() -> f64 {
    5.0
}
fn default_snapshot_period() -> f64 {
    10.0
}
fn default_idle_activity() -> Activity {
    Activity::Reading
}
fn default_idle_emotion() -> Emotion {
    Emotion::Neutral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub patient_id: String,
    pub duration_s: f64,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub events: Vec<Event>,
    pub seed: u64,
    #[serde(default = "default_speedup")]
    pub speedup: f64,
    /// Stream start; the emitter substitutes the current time when unset.
    #[serde(default)]
    pub start_ms: Option<i64>,
    #[serde(default = "default_vitals_period")]
    pub vitals_period_s: f64,
    /// Zero disables snapshots.
    #[serde(default = "default_snapshot_period")]
    pub snapshot_period_s: f64,
    #[serde(default)]
    pub device_id: Option<String>,
    #[serde(default = "default_idle_activity")]
    pub idle_activity: Activity,
    #[serde(default = "default_idle_emotion")]
    pub idle_emotion: Emotion,
}

impl Scenario {
    pub fn new(patient_id: &str, duration_s: f64, seed: u64) -> Self {
        Self {
            patient_id: patient_id.into(),
            duration_s,
            baseline: Baseline::default(),
            events: Vec::new(),
            seed,
            speedup: 1.0,
            start_ms: Some(0),
            vitals_period_s: default_vitals_period(),
            snapshot_period_s: default_snapshot_period(),
            device_id: None,
            idle_activity: default_idle_activity(),
            idle_emotion: default_idle_emotion(),
        }
    }

    pub fn with_event(mut self, e: Event) -> Self {
        self.events.push(e);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn start(&self) -> i64 {
        self.start_ms.unwrap_or(0)
    }

    pub fn device_id(&self) -> String {
        self.device_id
            .clone()
            .unwrap_or_else(|| format!("watch-{}", self.patient_id))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.patient_id.is_empty() {
            return bad("empty patient_id".into());
        }
        if !(self.duration_s > 0.0) {
            return bad(format!("duration_s {} must be positive", self.duration_s));
        }
        if !(self.speedup >= 1.0) {
            return bad(format!("speedup {} must be >= 1", self.speedup));
        }
        if !(self.vitals_period_s > 0.0) || !(self.snapshot_period_s >= 0.0) {
            return bad("periods must be positive".into());
        }
        for e in &self.events {
            let t = e.t_s();
            if !(0.0..=self.duration_s).contains(&t) {
                return bad(format!("event at {t}s outside [0, {}]", self.duration_s));
            }
            if let Event::Activity { duration_s, .. } = e {
                if !(*duration_s >= 0.0) {
                    return bad("activity duration must be non-negative".into());
                }
            }
        }
        Ok(())
    }
}

/// Resolved fall parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallSignature {
    pub center_ms: i64,
    pub peak_g: f64,
    pub width_ms: f64,
    pub dip_g: f64,
    pub dip_ms: f64,
    pub stillness_ms: f64,
    pub impact_dir: [f64; 3],
    pub rest_dir: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActivitySpan {
    from: i64,
    to: i64,
    sigma: f64,
    label: Activity,
    emotion: Option<Emotion>,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let z: f64 = rng.random_range(-0.3..0.3);
    unit([theta.cos(), theta.sin(), z])
}

/// Nearest 32 Hz grid instant to `t_s`, as an absolute timestamp.
fn grid_instant(start: i64, t_s: f64) -> i64 {
    let k = (t_s * f64::from(TARGET_HZ)).round() as i64;
    start + k * 1000 / i64::from(TARGET_HZ)
}

/// Timeline of motion events resolved against the seed.
#[derive(Debug, Clone)]
pub struct MotionPlan {
    pub falls: Vec<FallSignature>,
    activities: Vec<ActivitySpan>,
}

impl MotionPlan {
    pub fn resolve(s: &Scenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(1);
        let start = s.start();
        let mut falls = Vec::new();
        let mut activities = Vec::new();
        for e in &s.events {
            match e {
                Event::Fall { t_s, params } => falls.push(FallSignature {
                    center_ms: grid_instant(start, *t_s),
                    peak_g: params.peak_g.unwrap_or_else(|| rng.random_range(3.0..=6.0)),
                    width_ms: params.width_ms.unwrap_or_else(|| rng.random_range(40.0..=80.0)),
                    dip_g: params.dip_g.unwrap_or_else(|| rng.random_range(0.05..=0.35)),
                    dip_ms: 300.0,
                    stillness_ms: 1000.0
                        * params.stillness_s.unwrap_or_else(|| rng.random_range(1.5..=3.0)),
                    impact_dir: random_dir(&mut rng),
                    rest_dir: random_dir(&mut rng),
                }),
                Event::Activity {
                    t_s,
                    name,
                    duration_s,
                    params,
                } => {
                    let from = start + (t_s * 1000.0).round() as i64;
                    activities.push(ActivitySpan {
                        from,
                        to: from + (duration_s * 1000.0).round() as i64,
                        sigma: params.sigma_g.unwrap_or_else(|| rng.random_range(0.3..=0.8)),
                        label: name.parse().unwrap_or(Activity::Unidentifiable),
                        emotion: params.emotion,
                    });
                }
                Event::VitalExcursion { .. } => {}
            }
        }
        falls.sort_by_key(|f| f.center_ms);
        Self { falls, activities }
    }

    fn activity_at(&self, t: i64) -> Option<&ActivitySpan> {
        self.activities.iter().rev().find(|a| a.from <= t && t < a.to)
    }
}

enum Phase {
    Baseline { gravity: [f64; 3], sigma: f64 },
    Signal { vector: [f64; 3], sigma: f64 },
}

fn motion_phase(plan: &MotionPlan, t: i64) -> Phase {
    let mut gravity = [0.0, 0.0, 1.0];
    for f in &plan.falls {
        let half = f.width_ms / 2.0;
        let dt = (t - f.center_ms) as f64;
        if dt < -half - f.dip_ms {
            break;
        }
        if dt < -half {
            let v = gravity.map(|g| g * f.dip_g);
            return Phase::Signal {
                vector: v,
                sigma: STILL_SIGMA_G,
            };
        }
        if dt <= half {
            let m = f.peak_g * (std::f64::consts::PI * (dt + half) / f.width_ms).sin();
            return Phase::Signal {
                vector: f.impact_dir.map(|d| d * m),
                sigma: STILL_SIGMA_G,
            };
        }
        gravity = f.rest_dir;
        if dt <= half + f.stillness_ms {
            return Phase::Signal {
                vector: gravity,
                sigma: STILL_SIGMA_G,
            };
        }
    }
    let sigma = plan.activity_at(t).map_or(REST_SIGMA_G, |a| a.sigma);
    Phase::Baseline { gravity, sigma }
}

/// Raw 238 Hz accelerometry, clamped to ±8 g.
pub fn synth_accel(s: &Scenario) -> Vec<AccelSample> {
    let plan = MotionPlan::resolve(s);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let start = s.start();
    let n = (s.duration_s * f64::from(SOURCE_HZ)).floor() as i64;
    (0..n)
        .map(|i| {
            let t = start + i * 1000 / i64::from(SOURCE_HZ);
            let (base, sigma) = match motion_phase(&plan, t) {
                Phase::Baseline { gravity, sigma } => (gravity, sigma),
                Phase::Signal { vector, sigma } => (vector, sigma),
            };
            let mut axis = |b: f64| (b + sigma * normal.sample(&mut rng)).clamp(-RAW_RANGE_G, RAW_RANGE_G);
            let (x, y, z) = (axis(base[0]), axis(base[1]), axis(base[2]));
            AccelSample::new(t, x, y, z)
        })
        .collect()
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (v * p).round() / p
}

/// One vitals sample per period at baseline plus jitter; excursions hold the
/// scripted value over `[t_s, t_s + hold_s]`.
pub fn synth_vitals(s: &Scenario) -> Vec<VitalSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(3);
    let start = s.start();
    let period_ms = (s.vitals_period_s * 1000.0).round() as i64;
    let duration_ms = (s.duration_s * 1000.0).round() as i64;
    let mut out = Vec::new();
    let mut rel = 0;
    while rel < duration_ms {
        let mut v = VitalSample {
            t: start + rel,
            temp: 0.0,
            hr: 0.0,
            rr: 0.0,
            sys: 0.0,
            dia: 0.0,
            spo2: 0.0,
        };
        for &sign in Sign::ALL {
            let j = s.baseline.get(sign);
            let noise = if j.std > 0.0 {
                Normal::new(0.0, j.std).expect("finite std").sample(&mut rng)
            } else {
                0.0
            };
            let decimals = if sign == Sign::Temp { 2 } else { 1 };
            v.set(sign, round_to(j.mean + noise, decimals));
        }
        v.spo2 = v.spo2.clamp(0.0, 100.0);
        if v.sys <= v.dia {
            v.sys = v.dia + 1.0;
        }
        for e in &s.events {
            if let Event::VitalExcursion {
                t_s,
                sign,
                value,
                hold_s,
            } = e
            {
                let from = (t_s * 1000.0).round() as i64;
                let to = ((t_s + hold_s) * 1000.0).round() as i64;
                if (from..=to).contains(&rel) {
                    v.set(*sign, *value);
                }
            }
        }
        out.push(v);
        rel += period_ms;
    }
    out
}

/// Activity and emotion a snapshot at `t` depicts.
pub fn scripted_label(s: &Scenario, plan: &MotionPlan, t: i64) -> (Activity, Emotion) {
    match plan.activity_at(t) {
        Some(a) => (a.label, a.emotion.unwrap_or(s.idle_emotion)),
        None => (s.idle_activity, s.idle_emotion),
    }
}

/// Solid-color PNG carrying `activity/emotion` in a text chunk.
pub fn placeholder_png(activity: Activity, emotion: Emotion) -> Vec<u8> {
    let (w, h) = (32u32, 24u32);
    let label = format!("{activity}/{emotion}");
    let hash = label.bytes().fold(2166136261u32, |h, b| (h ^ u32::from(b)).wrapping_mul(16777619));
    let rgb = [(hash >> 16) as u8, (hash >> 8) as u8, hash as u8];
    let pixels: Vec<u8> = (0..w * h).flat_map(|_| rgb).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk(LABEL_KEY.into(), label)
            .expect("latin-1 label");
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&pixels).expect("png data");
    }
    out
}

/// Reads the label text embedded by [`placeholder_png`].
pub fn read_png_label(bytes: &[u8]) -> Option<(Activity, Emotion)> {
    let reader = png::Decoder::new(Cursor::new(bytes)).read_info().ok()?;
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == LABEL_KEY)?
        .text
        .clone();
    let (a, e) = text.split_once('/')?;
    Some((a.parse().ok()?, e.parse().ok()?))
}

pub fn synth_snapshots(s: &Scenario) -> Vec<SnapshotRef> {
    if s.snapshot_period_s <= 0.0 {
        return Vec::new();
    }
    let plan = MotionPlan::resolve(s);
    let start = s.start();
    let period_ms = (s.snapshot_period_s * 1000.0).round() as i64;
    let duration_ms = (s.duration_s * 1000.0).round() as i64;
    (0..)
        .map(|k| k * period_ms)
        .take_while(|rel| *rel < duration_ms)
        .map(|rel| {
            let t = start + rel;
            let (a, e) = scripted_label(s, &plan, t);
            SnapshotRef {
                t,
                patient_id: s.patient_id.clone(),
                mime: "image/png".into(),
                media: placeholder_png(a, e),
            }
        })
        .collect()
}

/// One minute of history starting 09:00 UTC on `date` (12 vitals, 6
/// snapshots at the default periods) as a single upload batch.
pub fn seeded_day(patient_id: &str, date: NaiveDate, seed: u64) -> UploadBatch {
    let mut s = Scenario::new(patient_id, 60.0, seed);
    let start = day_start_ms(date) + 9 * 3_600_000;
    s.start_ms = Some(start);
    let mut batch = UploadBatch::new(patient_id, start, start + 60_000);
    batch.vitals = synth_vitals(&s);
    batch.snapshots = synth_snapshots(&s);
    batch
}

/// A frame with the data-time instant at which it becomes available.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFrame {
    pub t: i64,
    pub frame: Frame,
}

/// Every frame of a session in emission order: hello, interleaved
/// accel batches / vitals / snapshots by timestamp, bye.
pub fn frame_plan(s: &Scenario) -> Vec<TimedFrame> {
    let start = s.start();
    let end = start + (s.duration_s * 1000.0).round() as i64;
    let mut timed: Vec<(i64, u8, Frame)> = Vec::new();

    let accel = synth_accel(s);
    let mut batch = Vec::new();
    let mut batch_end = start + BATCH_MS;
    for a in accel {
        while a.t >= batch_end {
            if !batch.is_empty() {
                timed.push((batch_end, 0, Frame::AccelBatch { samples: std::mem::take(&mut batch) }));
            }
            batch_end += BATCH_MS;
        }
        batch.push(a);
    }
    if !batch.is_empty() {
        timed.push((batch_end.min(end), 0, Frame::AccelBatch { samples: batch }));
    }
    timed.extend(synth_vitals(s).into_iter().map(|v| (v.t, 1, Frame::Vitals { sample: v })));
    timed.extend(
        synth_snapshots(s)
            .into_iter()
            .map(|snap| (snap.t, 2, Frame::Snapshot { snapshot: snap })),
    );
    timed.sort_by_key(|(t, order, _)| (*t, *order));

    let mut out = vec![TimedFrame {
        t: start,
        frame: Frame::hello(&s.device_id(), &s.patient_id),
    }];
    out.extend(timed.into_iter().map(|(t, _, frame)| TimedFrame { t, frame }));
    out.push(TimedFrame { t: end, frame: Frame::Bye });
    out
}

/// Kind of segment in the labeled evaluation corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Fall,
    Rest,
    Walking,
    Jogging,
    Vigorous,
    Transition,
}

impl SegmentKind {
    pub fn is_fall(&self) -> bool {
        matches!(self, SegmentKind::Fall)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSegment {
    pub kind: SegmentKind,
    pub start_ms: i64,
    pub raw: Vec<AccelSample>,
}

pub const SEGMENT_MS: i64 = 4000;
pub const CORPUS_START_MS: i64 = 1_736_380_800_000; // 2025-01-09T00:00:00Z

/// Contiguous 4 s segments (one detector window each): `falls` scripted falls
/// followed by `adl` activities-of-daily-living segments, shuffled.
pub fn labeled_corpus(seed: u64, falls: usize, adl: usize) -> Vec<CorpusSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<SegmentKind> = std::iter::repeat_n(SegmentKind::Fall, falls)
        .chain((0..adl).map(|i| {
            [
                SegmentKind::Rest,
                SegmentKind::Walking,
                SegmentKind::Jogging,
                SegmentKind::Vigorous,
                SegmentKind::Transition,
            ][i % 5]
        }))
        .collect();
    // Fisher-Yates with the corpus stream.
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    let seconds = SEGMENT_MS as f64 / 1000.0;
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let start_ms = CORPUS_START_MS + i as i64 * SEGMENT_MS;
            let mut sc = Scenario::new("corpus", seconds, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            sc.start_ms = Some(start_ms);
            let activity = |t_s: f64, duration_s: f64, sigma: Option<f64>| Event::Activity {
                t_s,
                name: "walking".into(),
                duration_s,
                params: ActivityParams {
                    sigma_g: sigma,
                    emotion: None,
                },
            };
            match kind {
                SegmentKind::Fall => {
                    // Impact between 0.75 s and 2.75 s leaves room for the dip
                    // before it and a full second of stillness after it.
                    let center_k = rng.random_range(24..=88);
                    let t_s = f64::from(center_k) / f64::from(TARGET_HZ);
                    if rng.random_bool(0.5) {
                        sc.events.push(activity(0.0, (t_s - 0.5).max(0.0), Some(0.3)));
                    }
                    sc.events.push(Event::Fall {
                        t_s,
                        params: FallParams::default(),
                    });
                }
                SegmentKind::Rest => {}
                SegmentKind::Walking => sc.events.push(activity(0.0, seconds, Some(0.3))),
                SegmentKind::Jogging => sc.events.push(activity(0.0, seconds, Some(0.5))),
                SegmentKind::Vigorous => sc.events.push(activity(0.0, seconds, None)),
                SegmentKind::Transition => {
                    let from = rng.random_range(0.0..2.5);
                    let len = rng.random_range(0.5..1.0);
                    sc.events.push(activity(from, len, None));
                }
            }
            CorpusSegment {
                kind,
                start_ms,
                raw: synth_accel(&sc),
            }
        })
        .collect()
}
