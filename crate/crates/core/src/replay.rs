//! Offline replay of recorded accelerometry through preprocessing and a
//! detector, with per-window scores and a confusion matrix when labeled.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::fall::{Confusion, Detector, FallScore};
use crate::signal::{normalize, resample, window, ReplayRow, SignalError, WINDOW_LEN};
use crate::sim::CorpusSegment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub t_start: i64,
    pub t_end: i64,
    pub score: FallScore,
    /// True when any labeled row inside the window is a fall.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub stride: usize,
    pub windows: Vec<WindowResult>,
    pub confusion: Option<Confusion>,
}

pub fn replay(rows: &[ReplayRow], detector: &Detector, stride: usize) -> Result<ReplayReport, SignalError> {
    let raw: Vec<_> = rows.iter().map(|r| r.sample).collect();
    crate::domain::validate_accel_stream(&raw).map_err(SignalError::Invalid)?;
    let stream = resample(&normalize(&raw))?;
    let labeled = rows.iter().any(|r| r.label.is_some());
    let mut results = Vec::new();
    let mut confusion = Confusion::default();
    // Rows are time-ordered, so each window's label is a range lookup.
    for w in window("replay", &stream, WINDOW_LEN, stride) {
        let (t0, t1) = (w.t_start, w.t_end());
        let lo = rows.partition_point(|r| r.sample.t < t0);
        let hi = rows.partition_point(|r| r.sample.t <= t1);
        let label = labeled.then(|| rows[lo..hi].iter().any(|r| r.label == Some(1)));
        let score = detector.score(&w);
        if let Some(actual) = label {
            confusion.record(score.is_fall, actual);
        }
        results.push(WindowResult {
            t_start: t0,
            t_end: t1,
            score,
            label,
        });
    }
    Ok(ReplayReport {
        stride,
        windows: results,
        confusion: labeled.then_some(confusion),
    })
}

/// Flattens corpus segments into labeled replay rows (1 = fall segment).
pub fn corpus_rows(segments: &[CorpusSegment]) -> Vec<ReplayRow> {
    segments
        .iter()
        .flat_map(|seg| {
            let label = u8::from(seg.kind.is_fall());
            seg.raw.iter().map(move |&sample| ReplayRow {
                sample,
                label: Some(label),
            })
        })
        .collect()
}

pub fn write_replay_csv<W: Write>(rows: &[ReplayRow], out: W) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SignalError::Csv(e.to_string());
    let labeled = rows.iter().any(|r| r.label.is_some());
    if labeled {
        w.write_record(["t_ms", "x", "y", "z", "label"]).map_err(err)?;
    } else {
        w.write_record(["t_ms", "x", "y", "z"]).map_err(err)?;
    }
    for r in rows {
        let s = r.sample;
        let mut rec = vec![s.t.to_string(), s.x.to_string(), s.y.to_string(), s.z.to_string()];
        if labeled {
            rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| SignalError::Csv(e.to_string()))
}

impl ReplayReport {
    pub fn render_confusion(&self) -> Option<String> {
        let c = self.confusion?;
        Some(format!(
            "{:<14}{:>10}{:>10}\n{:<14}{:>10}{:>10}\n{:<14}{:>10}{:>10}\nrecall {:.4}  precision {:.4}  accuracy {:.4}  f1 {:.4}\n",
            "",
            "pred fall",
            "pred adl",
            "actual fall",
            c.tp,
            c.fn_,
            "actual adl",
            c.fp,
            c.tn,
            c.recall(),
            c.precision(),
            c.accuracy(),
            c.f1()
        ))
    }
}
