//! Prompt assets and endpoint-prompt assembly.

use std::fs;
use std::io;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::recognize::RecognitionResult;
use crate::domain::{hhmm, utc_date, utc_datetime, Patient, VitalKind, VitalSample};

pub const INTENT_PROMPT: &str = include_str!("../../assets/intent_prompt.txt");
pub const RECOGNITION_PROMPT: &str = include_str!("../../assets/recognition_prompt.txt");
pub const ENDPOINT_PREAMBLE: &str = include_str!("../../assets/endpoint_preamble.txt");

/// System prompts; defaults are the bundled assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub intent: String,
    pub recognition: String,
    pub preamble: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            intent: INTENT_PROMPT.into(),
            recognition: RECOGNITION_PROMPT.into(),
            preamble: ENDPOINT_PREAMBLE.into(),
        }
    }
}

impl Prompts {
    /// Overrides each prompt whose file (`intent_prompt.txt`,
    /// `recognition_prompt.txt`, `endpoint_preamble.txt`) exists in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut p = Self::default();
        for (name, slot) in [
            ("intent_prompt.txt", &mut p.intent),
            ("recognition_prompt.txt", &mut p.recognition),
            ("endpoint_preamble.txt", &mut p.preamble),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointPrompt {
    pub system_preamble: String,
    pub patient_info: String,
    pub recognition: Option<String>,
    pub vitals: String,
    pub question: String,
}

impl EndpointPrompt {
    pub fn render(&self) -> String {
        let mut out = format!("{}\n\n## Patient\n{}\n", self.system_preamble.trim_end(), self.patient_info);
        if let Some(r) = &self.recognition {
            out.push_str(&format!("\n## Activity and emotion\n{r}\n"));
        }
        out.push_str(&format!("\n## Vital signs\n{}\n\n## Question\n{}\n", self.vitals, self.question));
        out
    }
}

fn age_on(dob: NaiveDate, today: NaiveDate) -> i32 {
    let mut age = today.year() - dob.year();
    if (today.month(), today.day()) < (dob.month(), dob.day()) {
        age -= 1;
    }
    age
}

pub fn patient_block(patient_id: &str, patient: Option<&Patient>, now: i64) -> String {
    match patient {
        Some(p) => {
            let mut s = format!(
                "Patient ID: {}\nName: {}\nDate of birth: {} (age {})",
                p.patient_id,
                p.name,
                p.date_of_birth,
                age_on(p.date_of_birth, utc_date(now))
            );
            if !p.notes.is_empty() {
                s.push_str(&format!("\nNotes: {}", p.notes));
            }
            s
        }
        None => format!("Patient ID: {patient_id}\n(no registry entry)"),
    }
}

pub fn recognition_block(r: &RecognitionResult, snapshot_t: i64) -> String {
    format!(
        "Snapshot at {} UTC\nActivity: {}\nEmotion: {}",
        utc_datetime(snapshot_t).format("%Y-%m-%d %H:%M:%S"),
        r.activity,
        r.emotion
    )
}

pub fn fmt_value(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    format!("{r}")
}

pub fn sign_value(v: &VitalSample, k: VitalKind) -> String {
    match k {
        VitalKind::BloodPressure => format!(
            "{}/{} {}",
            fmt_value(v.sys),
            fmt_value(v.dia),
            k.unit()
        ),
        _ => format!("{} {}", fmt_value(v.get(k.signs()[0])), k.unit()),
    }
}

/// One line per sample, limited to the requested signs.
pub fn vitals_block(records: &[VitalSample], signs: &[VitalKind]) -> String {
    if records.is_empty() {
        return "(no vital-sign data)".into();
    }
    records
        .iter()
        .map(|v| {
            let fields: Vec<String> = signs.iter().map(|&k| format!("{} {}", k.label(), sign_value(v, k))).collect();
            format!(
                "{} {} UTC: {}",
                utc_date(v.t),
                hhmm(v.t),
                fields.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
