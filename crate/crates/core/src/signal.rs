//! Accelerometer preprocessing: range rescaling, rate conversion, windowing.
//!
//! Raw wrist samples arrive at 238 Hz with a ±8 g range. They are rescaled to
//! ±1 g, resampled onto a uniform 32 Hz grid by per-axis linear interpolation,
//! and cut into overlapping 128-sample (4 s) windows for the fall detectors.
//!
//! Both [`resample`] and [`window`] are thin wrappers over the streaming
//! [`Resampler`] and [`Windower`] used by the edge node, so batch and
//! streaming paths produce identical output.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AccelSample, NORMALIZED_RANGE_G, RAW_RANGE_G};

pub const SOURCE_HZ: u32 = 238;
pub const TARGET_HZ: u32 = 32;
pub const WINDOW_LEN: usize = 128;
pub const WINDOW_STRIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignalError {
    #[error("resampling needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamp {got} does not follow {prev}")]
    NonIncreasing { prev: i64, got: i64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Invalid(#[from] crate::domain::ValidationError),
}

/// Fixed-length block of normalized samples, the detectors' input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub patient_id: String,
    pub t_start: i64,
    pub samples: Vec<AccelSample>,
}

impl Window {
    pub fn new(patient_id: impl Into<String>, samples: Vec<AccelSample>) -> Self {
        let t_start = samples.first().map_or(0, |s| s.t);
        Self {
            patient_id: patient_id.into(),
            t_start,
            samples,
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(AccelSample::magnitude).collect()
    }

    pub fn t_end(&self) -> i64 {
        self.samples.last().map_or(self.t_start, |s| s.t)
    }
}

/// Maps every component by `v * to_g / from_g`, clamped to `±to_g`.
pub fn rescale(samples: &[AccelSample], from_g: f64, to_g: f64) -> Vec<AccelSample> {
    assert!(from_g > 0.0 && to_g > 0.0, "ranges must be positive");
    let k = to_g / from_g;
    let map = |v: f64| (v * k).clamp(-to_g, to_g);
    samples
        .iter()
        .map(|s| AccelSample::new(s.t, map(s.x), map(s.y), map(s.z)))
        .collect()
}

/// Rescales raw ±8 g samples to the ±1 g working range.
pub fn normalize(samples: &[AccelSample]) -> Vec<AccelSample> {
    rescale(samples, RAW_RANGE_G, NORMALIZED_RANGE_G)
}

/// Streaming linear-interpolation resampler.
///
/// Output sample `k` is due once the input has reached the exact instant
/// `t0 + k * 1000 / rate` ms; its timestamp is that instant floored to whole
/// milliseconds and its value is interpolated at that timestamp.
#[derive(Debug, Clone)]
pub struct Resampler {
    rate_hz: u32,
    t0: Option<i64>,
    prev: Option<AccelSample>,
    next_k: i64,
}

impl Resampler {
    pub fn new(rate_hz: u32) -> Self {
        assert!(rate_hz > 0);
        Self {
            rate_hz,
            t0: None,
            prev: None,
            next_k: 0,
        }
    }

    fn due(&self, k: i64) -> i64 {
        k * 1000 / i64::from(self.rate_hz)
    }

    /// Feeds one input sample, appending any output samples it completes.
    pub fn push(&mut self, s: AccelSample, out: &mut Vec<AccelSample>) -> Result<(), SignalError> {
        let Some(t0) = self.t0 else {
            self.t0 = Some(s.t);
            self.prev = Some(s);
            self.next_k = 1;
            out.push(s);
            return Ok(());
        };
        let prev = self.prev.expect("prev set with t0");
        if s.t <= prev.t {
            return Err(SignalError::NonIncreasing {
                prev: prev.t,
                got: s.t,
            });
        }
        let span = (s.t - t0) * i64::from(self.rate_hz);
        while self.next_k * 1000 <= span {
            let tk = t0 + self.due(self.next_k);
            let frac = (tk - prev.t) as f64 / (s.t - prev.t) as f64;
            let lerp = |a: f64, b: f64| a + frac * (b - a);
            out.push(AccelSample::new(
                tk,
                lerp(prev.x, s.x),
                lerp(prev.y, s.y),
                lerp(prev.z, s.z),
            ));
            self.next_k += 1;
        }
        self.prev = Some(s);
        Ok(())
    }
}

/// Resamples a strictly increasing sequence onto a uniform grid at `rate_hz`.
pub fn resample_to(samples: &[AccelSample], rate_hz: u32) -> Result<Vec<AccelSample>, SignalError> {
    if samples.len() < 2 {
        return Err(SignalError::TooFewSamples(samples.len()));
    }
    let mut rs = Resampler::new(rate_hz);
    let mut out = Vec::new();
    for s in samples {
        rs.push(*s, &mut out)?;
    }
    Ok(out)
}

/// Resamples onto the 32 Hz detector grid.
pub fn resample(samples: &[AccelSample]) -> Result<Vec<AccelSample>, SignalError> {
    resample_to(samples, TARGET_HZ)
}

/// Streaming windowing cursor: emits a window every `stride` samples once
/// `len` samples have accumulated.
#[derive(Debug, Clone)]
pub struct Windower {
    patient_id: String,
    len: usize,
    stride: usize,
    buf: Vec<AccelSample>,
}

impl Windower {
    pub fn new(patient_id: impl Into<String>, len: usize, stride: usize) -> Self {
        assert!(len > 0 && stride > 0 && stride <= len);
        Self {
            patient_id: patient_id.into(),
            len,
            stride,
            buf: Vec::with_capacity(len),
        }
    }

    pub fn push(&mut self, s: AccelSample) -> Option<Window> {
        self.buf.push(s);
        if self.buf.len() < self.len {
            return None;
        }
        let w = Window::new(self.patient_id.clone(), self.buf.clone());
        self.buf.drain(..self.stride);
        Some(w)
    }
}

/// Cuts a uniform stream into overlapping windows ordered by start time.
pub fn window(
    patient_id: &str,
    stream: &[AccelSample],
    len: usize,
    stride: usize,
) -> Vec<Window> {
    let mut w = Windower::new(patient_id, len, stride);
    stream.iter().filter_map(|s| w.push(*s)).collect()
}

/// Full preprocessing chain for a raw recording: normalize, resample, window.
pub fn preprocess(patient_id: &str, raw: &[AccelSample]) -> Result<Vec<Window>, SignalError> {
    let resampled = resample(&normalize(raw))?;
    Ok(window(patient_id, &resampled, WINDOW_LEN, WINDOW_STRIDE))
}

/// One row of a replay recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayRow {
    pub sample: AccelSample,
    pub label: Option<u8>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    t_ms: i64,
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    label: Option<u8>,
}

/// Reads a `t_ms,x,y,z[,label]` CSV recording in raw g-units.
pub fn read_replay_csv<R: Read>(reader: R) -> Result<Vec<ReplayRow>, SignalError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| SignalError::Csv(e.to_string()))?;
    let expected = ["t_ms", "x", "y", "z"];
    if headers.len() < 4 || headers.iter().take(4).ne(expected) {
        return Err(SignalError::Csv(format!(
            "header must start with t_ms,x,y,z (got {headers:?})"
        )));
    }
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| SignalError::Csv(e.to_string()))?;
            Ok(ReplayRow {
                sample: AccelSample::new(row.t_ms, row.x, row.y, row.z),
                label: row.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, step_ms: i64, a: f64) -> Vec<AccelSample> {
        (0..n as i64)
            .map(|i| {
                let t = i * step_ms;
                AccelSample::new(t, a * t as f64, -a * t as f64, 0.25)
            })
            .collect()
    }

    #[test]
    fn rescale_examples() {
        let out = rescale(
            &[
                AccelSample::new(0, 8.0, 0.0, -4.0),
                AccelSample::new(1, 0.0, 0.0, 0.0),
            ],
            8.0,
            1.0,
        );
        assert_eq!(out[0], AccelSample::new(0, 1.0, 0.0, -0.5));
        assert_eq!(out[1], AccelSample::new(1, 0.0, 0.0, 0.0));
    }

    #[test]
    fn rescale_clamps_out_of_range() {
        let out = rescale(&[AccelSample::new(0, 9.0, -12.0, 2.0)], 8.0, 1.0);
        assert_eq!(out[0], AccelSample::new(0, 1.0, -1.0, 0.25));
    }

    #[test]
    fn resample_needs_two_samples() {
        assert_eq!(
            resample(&[AccelSample::new(0, 0.0, 0.0, 0.0)]),
            Err(SignalError::TooFewSamples(1))
        );
        assert_eq!(resample(&[]), Err(SignalError::TooFewSamples(0)));
    }

    #[test]
    fn resample_rejects_non_increasing() {
        let s = [
            AccelSample::new(0, 0.0, 0.0, 0.0),
            AccelSample::new(10, 0.0, 0.0, 0.0),
            AccelSample::new(10, 0.0, 0.0, 0.0),
        ];
        assert!(matches!(
            resample(&s),
            Err(SignalError::NonIncreasing { prev: 10, got: 10 })
        ));
    }

    #[test]
    fn resample_constant_signal() {
        let s: Vec<_> = (0..500)
            .map(|i| AccelSample::new(i * 1000 / 238, 0.5, 0.5, 0.5))
            .collect();
        let out = resample(&s).unwrap();
        assert!(out.iter().all(|o| o.x == 0.5 && o.y == 0.5 && o.z == 0.5));
    }

    #[test]
    fn resample_is_exact_on_ramps() {
        let s = ramp(300, 4, 0.001);
        let out = resample(&s).unwrap();
        let span = 299 * 4;
        assert_eq!(out.len() as i64, span * 32 / 1000 + 1);
        for o in &out {
            let expect = 0.001 * o.t as f64;
            assert!((o.x - expect).abs() <= 1e-12, "{} vs {}", o.x, expect);
            assert!((o.y + expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn resample_timestamps_follow_grid() {
        let s = ramp(100, 5, 1.0);
        let out = resample(&s).unwrap();
        for (k, o) in out.iter().enumerate() {
            assert_eq!(o.t, k as i64 * 1000 / 32);
        }
        for pair in out.windows(2) {
            let dt = pair[1].t - pair[0].t;
            assert!((31..=32).contains(&dt));
        }
    }

    #[test]
    fn streaming_matches_batch_across_chunks() {
        let s: Vec<_> = (0..2000)
            .map(|i| {
                let t = i * 1000 / 238;
                AccelSample::new(t, (t as f64 * 0.01).sin(), 0.1, (t as f64 * 0.003).cos())
            })
            .collect();
        let batch = resample(&s).unwrap();
        let mut rs = Resampler::new(TARGET_HZ);
        let mut streamed = Vec::new();
        for chunk in s.chunks(59) {
            for x in chunk {
                rs.push(*x, &mut streamed).unwrap();
            }
        }
        assert_eq!(batch, streamed);
    }

    #[test]
    fn window_counts() {
        let stream: Vec<_> = (0..1000)
            .map(|i| AccelSample::new(i * 1000 / 32, 0.0, 0.0, 0.125))
            .collect();
        assert_eq!(window("p", &stream[..128], 128, 64).len(), 1);
        let two = window("p", &stream[..192], 128, 64);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].t_start, stream[0].t);
        assert_eq!(two[1].t_start, stream[64].t);
        assert_eq!(window("p", &stream, 128, 64).len(), (1000 - 128) / 64 + 1);
        assert!(window("p", &stream[..127], 128, 64).is_empty());
    }

    #[test]
    fn replay_csv_parses_optional_label() {
        let text = "t_ms,x,y,z,label\n0,0.0,0.0,8.0,0\n4,1.5,-2.0,1.0,1\n";
        let rows = read_replay_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].sample, AccelSample::new(4, 1.5, -2.0, 1.0));
        assert_eq!(rows[1].label, Some(1));
        let plain = read_replay_csv("t_ms,x,y,z\n0,0,0,1\n".as_bytes()).unwrap();
        assert_eq!(plain[0].label, None);
        assert!(read_replay_csv("time,x,y,z\n0,0,0,1\n".as_bytes()).is_err());
    }
}
