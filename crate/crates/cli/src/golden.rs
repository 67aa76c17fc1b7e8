//! Golden-file evaluation of intent detection.

use chrono::{DateTime, Utc};
use remoni_core::domain::Patient;
use remoni_core::nlp::{IntentError, IntentRecord, Registry};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// `{"now": ..., "patients": [...], "cases": [{"question", "expected" | "error"}]}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenFile {
    /// Reference clock for relative dates.
    pub now: DateTime<Utc>,
    #[serde(default)]
    pub patients: Vec<Patient>,
    pub cases: Vec<GoldenCase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenCase {
    pub question: String,
    #[serde(default)]
    pub now: Option<DateTime<Utc>>,
    /// The seven-key record, compared as JSON.
    #[serde(default)]
    pub expected: Option<Value>,
    /// Error kind name when the question must be rejected.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseFailure {
    pub question: String,
    pub expected: Value,
    pub got: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NluReport {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<CaseFailure>,
}

pub fn error_name(e: &IntentError) -> &'static str {
    match e {
        IntentError::EmptyQuestion => "EmptyQuestion",
        IntentError::MissingPatient => "MissingPatient",
        IntentError::LlmSchemaError(_) => "LlmSchemaError",
        IntentError::LlmUnavailable(_) => "LlmUnavailable",
    }
}

fn outcome(r: Result<IntentRecord, IntentError>) -> Value {
    match r {
        Ok(i) => serde_json::to_value(i).expect("intent serializes"),
        Err(e) => serde_json::json!({ "error": error_name(&e) }),
    }
}

impl GoldenFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn registry(&self) -> Registry {
        Registry {
            patients: self.patients.clone(),
        }
    }

    pub fn evaluate(&self, detect: impl Fn(&str, i64) -> Result<IntentRecord, IntentError>) -> NluReport {
        let mut failures = Vec::new();
        for c in &self.cases {
            let now = c.now.unwrap_or(self.now).timestamp_millis();
            let expected = match (&c.expected, &c.error) {
                (Some(v), None) => v.clone(),
                (None, Some(e)) => serde_json::json!({ "error": e }),
                _ => serde_json::json!({ "error": "case needs exactly one of expected/error" }),
            };
            let got = outcome(detect(&c.question, now));
            if got != expected {
                failures.push(CaseFailure {
                    question: c.question.clone(),
                    expected,
                    got,
                });
            }
        }
        NluReport {
            total: self.cases.len(),
            passed: self.cases.len() - failures.len(),
            failures,
        }
    }
}

impl NluReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for f in &self.failures {
            out.push_str(&format!("FAIL {:?}\n  expected {}\n  got      {}\n", f.question, f.expected, f.got));
        }
        out.push_str(&format!("{}/{} exact match\n", self.passed, self.total));
        out
    }
}
