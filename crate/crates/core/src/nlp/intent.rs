//! Question → seven-key intent record.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use chrono::{Days, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::llm::{extract_json_object, ChatRequest, LlmError, TextModel};
use crate::domain::{utc_date, utc_datetime, VitalKind};
use crate::store::{TimeRange, MINUTES_PER_DAY};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentRecord {
    pub patient_id: String,
    pub list_date: Vec<NaiveDate>,
    pub list_time: Vec<TimeRange>,
    pub vital_sign: Vec<VitalKind>,
    pub is_plot: bool,
    pub is_recognition: bool,
    pub is_image: bool,
}

impl IntentRecord {
    pub fn instant(patient_id: &str) -> Self {
        Self {
            patient_id: patient_id.into(),
            list_date: vec![],
            list_time: vec![],
            vital_sign: vec![],
            is_plot: false,
            is_recognition: false,
            is_image: false,
        }
    }

    pub fn is_instant(&self) -> bool {
        self.list_date.is_empty() && self.list_time.is_empty()
    }

    /// Requested signs; all five when none were named.
    pub fn signs(&self) -> Vec<VitalKind> {
        if self.vital_sign.is_empty() {
            VitalKind::ALL.to_vec()
        } else {
            self.vital_sign.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("empty question")]
    EmptyQuestion,
    #[error("no patient could be identified in the question")]
    MissingPatient,
    #[error("intent model reply did not match the schema: {0}")]
    LlmSchemaError(String),
    #[error("intent model unavailable: {0}")]
    LlmUnavailable(String),
}

/// Deterministic keyword grammar.
#[derive(Debug, Clone, Default)]
pub struct Grammar {
    /// Lower-case patient name → patient id.
    names: Vec<(String, String)>,
    known_ids: BTreeSet<String>,
}

macro_rules! re {
    ($name:ident, $pat:literal) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($pat).expect("static regex"));
    };
}

re!(PATIENT, r"(?i)\bpatient\s+([A-Za-z0-9_\-]+)");
re!(HEART, r"(?i)\b(?:heart\s*rates?|pulse)\b");
re!(TEMP, r"(?i)\b(?:temperatures?|fevers?)\b");
re!(RESP, r"(?i)\b(?:breathing|respiration)\b");
re!(BP, r"(?i)\bblood\s+pressures?\b");
re!(SPO2, r"(?i)\b(?:oxygen|spo2|saturation)\b");
re!(PLOT, r"(?i)\b(?:plot\w*|charts?|graphs?)\b");
re!(RECOG, r"(?i)\b(?:doing|activity|activities|emotions?|emotional|moods?|feel|feels|feeling|state)\b");
re!(IMAGE, r"(?i)\b(?:show\w*|pictures?|images?|snapshots?|see)\b");
re!(TODAY, r"(?i)\btoday\b");
re!(YESTERDAY, r"(?i)\byesterday\b");
re!(ON_DATE, r"(?i)\bon\s+(\d{4}-\d{2}-\d{2})\b");
re!(LAST_DAYS, r"(?i)\blast\s+(\d+|one|two|three|four|five|six|seven|eight|nine|ten)\s+days?\b");
re!(AT_TIME, r"(?i)\bat\s+(\d{1,2}):(\d{2})\b");
re!(MORNING, r"(?i)\bmornings?\b");
re!(AFTERNOON, r"(?i)\bafternoons?\b");
re!(EVENING, r"(?i)\bevenings?\b");

fn word_number(s: &str) -> Option<u64> {
    let words = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    s.parse()
        .ok()
        .or_else(|| words.iter().position(|w| w.eq_ignore_ascii_case(s)).map(|i| i as u64 + 1))
}

impl Grammar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a patient resolvable by name (case-insensitive, whole words) and
    /// by id after the word "patient".
    pub fn with_patient(mut self, patient_id: &str, name: &str) -> Self {
        if !name.trim().is_empty() {
            self.names.push((name.trim().to_lowercase(), patient_id.into()));
            // Longest names first so "Ann Lee" wins over "Ann".
            self.names.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        }
        self.known_ids.insert(patient_id.into());
        self
    }

    fn patient(&self, q: &str) -> Option<String> {
        for c in PATIENT.captures_iter(q) {
            let token = &c[1];
            if token.chars().any(|ch| ch.is_ascii_digit()) || self.known_ids.contains(token) {
                return Some(token.to_string());
            }
        }
        let lower = q.to_lowercase();
        self.names.iter().find_map(|(name, id)| {
            let pat = format!(r"\b{}\b", regex::escape(name));
            Regex::new(&pat).ok()?.is_match(&lower).then(|| id.clone())
        })
    }

    pub fn detect(&self, question: &str, now: i64) -> Result<IntentRecord, IntentError> {
        if question.trim().is_empty() {
            return Err(IntentError::EmptyQuestion);
        }
        let patient_id = self.patient(question).ok_or(IntentError::MissingPatient)?;
        let today = utc_date(now);

        let vital_sign: Vec<VitalKind> = [
            (&*TEMP, VitalKind::Temperature),
            (&*HEART, VitalKind::HeartRate),
            (&*RESP, VitalKind::RespirationRate),
            (&*BP, VitalKind::BloodPressure),
            (&*SPO2, VitalKind::Spo2),
        ]
        .into_iter()
        .filter(|(re, _)| re.is_match(question))
        .map(|(_, k)| k)
        .collect();

        let mut dates = BTreeSet::new();
        if TODAY.is_match(question) {
            dates.insert(today);
        }
        if YESTERDAY.is_match(question) {
            dates.extend(today.checked_sub_days(Days::new(1)));
        }
        for c in ON_DATE.captures_iter(question) {
            if let Ok(d) = c[1].parse::<NaiveDate>() {
                dates.insert(d);
            }
        }
        for c in LAST_DAYS.captures_iter(question) {
            let n = word_number(&c[1]).unwrap_or(0).min(366);
            dates.extend((0..n).filter_map(|k| today.checked_sub_days(Days::new(k))));
        }

        let mut times = BTreeSet::new();
        for c in AT_TIME.captures_iter(question) {
            let (h, m): (u16, u16) = (c[1].parse().unwrap_or(99), c[2].parse().unwrap_or(99));
            if h < 24 && m < 60 {
                let from = h * 60 + m;
                times.insert(TimeRange::new(from, (from + 1).min(MINUTES_PER_DAY)).expect("valid minute"));
            }
        }
        for (re, from, to) in [(&*MORNING, 6, 12), (&*AFTERNOON, 12, 18), (&*EVENING, 18, 24)] {
            if re.is_match(question) {
                times.insert(TimeRange::new(from * 60, to * 60).expect("valid range"));
            }
        }

        Ok(IntentRecord {
            patient_id,
            list_date: dates.into_iter().collect(),
            list_time: times.into_iter().collect(),
            vital_sign,
            is_plot: PLOT.is_match(question),
            is_recognition: RECOG.is_match(question),
            is_image: IMAGE.is_match(question),
        })
    }
}

/// Parses and checks a model's intent reply.
pub fn parse_intent_reply(reply: &str) -> Result<IntentRecord, IntentError> {
    let json = extract_json_object(reply).ok_or_else(|| IntentError::LlmSchemaError("no JSON object in reply".into()))?;
    let intent: IntentRecord =
        serde_json::from_str(json).map_err(|e| IntentError::LlmSchemaError(e.to_string()))?;
    if intent.patient_id.is_empty() {
        return Err(IntentError::MissingPatient);
    }
    Ok(intent)
}

/// Asks a model for the intent, retrying once on a schema-invalid reply.
pub fn detect_with_model(
    model: &dyn TextModel,
    system_prompt: &str,
    question: &str,
    now: i64,
) -> Result<IntentRecord, IntentError> {
    if question.trim().is_empty() {
        return Err(IntentError::EmptyQuestion);
    }
    let user = format!(
        "Current time (UTC): {}\nQuestion: {question}",
        utc_datetime(now).format("%Y-%m-%dT%H:%M:%SZ")
    );
    let mut request = ChatRequest::text(system_prompt, &user);
    let mut last_err = None;
    for _ in 0..2 {
        let reply = model.complete(&request).map_err(|e| match e {
            LlmError::Unavailable(m) => IntentError::LlmUnavailable(m),
            LlmError::BadReply(m) => IntentError::LlmSchemaError(m),
        })?;
        match parse_intent_reply(&reply) {
            Ok(i) => return Ok(i),
            Err(e) => {
                request.user = format!(
                    "{user}\n\nYour previous reply was not a valid intent object ({e}). Reply with the JSON object only."
                );
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("two attempts made"))
}
