//! Plot function: vitals records → chart specification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Sign, VitalKind, VitalSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub t: i64,
    pub value: f64,
    /// Diastolic value on blood-pressure series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub sign: VitalKind,
    pub label: String,
    pub unit: String,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl PlotSpec {
    pub fn point_count(&self) -> usize {
        self.series.iter().map(|s| s.points.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no data in range")]
pub struct EmptyData;

fn axis_label(k: VitalKind) -> String {
    let label = k.label();
    let mut c = label.chars();
    let cap: String = c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default();
    format!("{cap} ({})", k.unit())
}

/// One series per requested sign (all five when `signs` is empty), points in
/// time order.
pub fn make_plot(patient_id: &str, records: &[VitalSample], signs: &[VitalKind]) -> Result<PlotSpec, EmptyData> {
    if records.is_empty() {
        return Err(EmptyData);
    }
    let signs = if signs.is_empty() { VitalKind::ALL } else { signs };
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|v| v.t);
    let series: Vec<Series> = signs
        .iter()
        .map(|&k| Series {
            sign: k,
            label: axis_label(k),
            unit: k.unit().into(),
            points: sorted
                .iter()
                .map(|v| PlotPoint {
                    t: v.t,
                    value: v.get(k.signs()[0]),
                    value2: (k == VitalKind::BloodPressure).then(|| v.get(Sign::Dia)),
                })
                .collect(),
        })
        .collect();
    let names: Vec<&str> = signs.iter().map(|k| k.label()).collect();
    let y_label = match signs {
        [one] => axis_label(*one),
        _ => signs.iter().map(|&k| axis_label(k)).collect::<Vec<_>>().join(" / "),
    };
    Ok(PlotSpec {
        title: format!("Patient {patient_id}: {}", names.join(", ")),
        x_label: "time (UTC)".into(),
        y_label,
        series,
    })
}
