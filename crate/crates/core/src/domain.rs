//! Value types shared by every stage of the monitor.
//!
//! All timestamps are integer milliseconds since the Unix epoch (UTC). Every
//! type renders to canonical JSON with lower_snake_case field names; the wire
//! protocol, the store, and the HTTP API all use that rendering.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveTime, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fall::DetectorSource;
use crate::vitals::Violation;

/// Full-scale range of the raw wrist accelerometer, in g.
pub const RAW_RANGE_G: f64 = 8.0;
/// Full-scale range after normalization, in g.
pub const NORMALIZED_RANGE_G: f64 = 1.0;

pub const MS_PER_DAY: i64 = 86_400_000;

pub fn now_ms() -> i64 {
    Utc::now().timestamp_millis()
}

pub fn utc_datetime(t: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(t).unwrap_or_default()
}

pub fn utc_date(t: i64) -> NaiveDate {
    utc_datetime(t).date_naive()
}

/// Milliseconds elapsed since UTC midnight.
pub fn ms_of_day(t: i64) -> i64 {
    t.rem_euclid(MS_PER_DAY)
}

pub fn day_start_ms(date: NaiveDate) -> i64 {
    date.and_time(NaiveTime::MIN).and_utc().timestamp_millis()
}

/// `hh:mm` rendering of a UTC timestamp.
pub fn hhmm(t: i64) -> String {
    let dt = utc_datetime(t);
    format!("{:02}:{:02}", dt.hour(), dt.minute())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ValidationError {
    pub field: &'static str,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

pub trait Validate {
    fn validate(&self) -> Result<(), ValidationError>;
}

fn finite(field: &'static str, v: f64) -> Result<(), ValidationError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ValidationError::new(field, format!("{v} is not finite")))
    }
}

/// One 3-axis accelerometer reading in g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn new(t: i64, x: f64, y: f64, z: f64) -> Self {
        Self { t, x, y, z }
    }

    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Checks the sample against a full-scale range other than the raw one.
    pub fn validate_within(&self, range_g: f64) -> Result<(), ValidationError> {
        for (field, v) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            finite(field, v)?;
            if v.abs() > range_g {
                return Err(ValidationError::new(
                    field,
                    format!("|{v}| exceeds {range_g} g"),
                ));
            }
        }
        Ok(())
    }
}

impl Validate for AccelSample {
    fn validate(&self) -> Result<(), ValidationError> {
        self.validate_within(RAW_RANGE_G)
    }
}

/// Checks that timestamps strictly increase along a stream.
pub fn validate_accel_stream(samples: &[AccelSample]) -> Result<(), ValidationError> {
    for pair in samples.windows(2) {
        if pair[1].t <= pair[0].t {
            return Err(ValidationError::new(
                "t",
                format!("{} does not follow {}", pair[1].t, pair[0].t),
            ));
        }
    }
    samples.iter().try_for_each(Validate::validate)
}

/// One reading of the five monitored vital signs (blood pressure as two fields).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub t: i64,
    /// Body temperature, °C.
    pub temp: f64,
    /// Heart rate, beats/min.
    pub hr: f64,
    /// Respiration rate, breaths/min.
    pub rr: f64,
    /// Systolic pressure, mmHg.
    pub sys: f64,
    /// Diastolic pressure, mmHg.
    pub dia: f64,
    /// Oxygen saturation, percent.
    pub spo2: f64,
}

impl VitalSample {
    pub fn get(&self, sign: Sign) -> f64 {
        match sign {
            Sign::Temp => self.temp,
            Sign::Hr => self.hr,
            Sign::Rr => self.rr,
            Sign::Sys => self.sys,
            Sign::Dia => self.dia,
            Sign::Spo2 => self.spo2,
        }
    }

    pub fn set(&mut self, sign: Sign, value: f64) {
        match sign {
            Sign::Temp => self.temp = value,
            Sign::Hr => self.hr = value,
            Sign::Rr => self.rr = value,
            Sign::Sys => self.sys = value,
            Sign::Dia => self.dia = value,
            Sign::Spo2 => self.spo2 = value,
        }
    }
}

impl Validate for VitalSample {
    fn validate(&self) -> Result<(), ValidationError> {
        for &sign in Sign::ALL {
            finite(sign.as_str(), self.get(sign))?;
        }
        if !(0.0..=100.0).contains(&self.spo2) {
            return Err(ValidationError::new(
                "spo2",
                format!("{} out of [0,100]", self.spo2),
            ));
        }
        if self.sys <= self.dia {
            return Err(ValidationError::new(
                "sys",
                format!("sys>dia violated ({} <= {})", self.sys, self.dia),
            ));
        }
        Ok(())
    }
}

/// A still image from the visual channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub t: i64,
    pub patient_id: String,
    pub mime: String,
    /// Image bytes, base64 in JSON.
    #[serde(with = "base64_bytes")]
    pub media: Vec<u8>,
}

impl Validate for SnapshotRef {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.patient_id.is_empty() {
            return Err(ValidationError::new("patient_id", "empty"));
        }
        if self.media.is_empty() {
            return Err(ValidationError::new("media", "empty"));
        }
        if !self.mime.starts_with("image/") {
            return Err(ValidationError::new(
                "mime",
                format!("{} is not an image type", self.mime),
            ));
        }
        Ok(())
    }
}

pub(crate) mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub name: String,
    pub date_of_birth: NaiveDate,
    #[serde(default)]
    pub notes: String,
}

impl Validate for Patient {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.patient_id.is_empty() {
            return Err(ValidationError::new("patient_id", "empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Fall,
    VitalOutOfRange,
}

/// Evidence attached to an alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlertDetail {
    Vital(Violation),
    Fall {
        probability: f64,
        threshold: f64,
        source: DetectorSource,
        window_t_start: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub patient_id: String,
    pub kind: AlertKind,
    pub detail: AlertDetail,
    pub t_detected: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_received: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_delivered: Option<i64>,
}

impl Alert {
    pub fn vital(patient_id: &str, violation: Violation, sample_t: i64, t_detected: i64) -> Self {
        Self {
            alert_id: format!("{patient_id}:vital:{}:{sample_t}", violation.sign),
            patient_id: patient_id.to_string(),
            kind: AlertKind::VitalOutOfRange,
            detail: AlertDetail::Vital(violation),
            t_detected,
            t_received: None,
            t_delivered: None,
        }
    }

    pub fn fall(patient_id: &str, score: &crate::fall::FallScore, t_detected: i64) -> Self {
        Self {
            alert_id: format!("{patient_id}:fall:{}", score.window_t_start),
            patient_id: patient_id.to_string(),
            kind: AlertKind::Fall,
            detail: AlertDetail::Fall {
                probability: score.probability,
                threshold: score.threshold,
                source: score.source,
                window_t_start: score.window_t_start,
            },
            t_detected,
            t_received: None,
            t_delivered: None,
        }
    }
}

impl Validate for Alert {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.alert_id.is_empty() {
            return Err(ValidationError::new("alert_id", "empty"));
        }
        if self.patient_id.is_empty() {
            return Err(ValidationError::new("patient_id", "empty"));
        }
        let consistent = matches!(
            (self.kind, &self.detail),
            (AlertKind::Fall, AlertDetail::Fall { .. })
                | (AlertKind::VitalOutOfRange, AlertDetail::Vital(_))
        );
        if !consistent {
            return Err(ValidationError::new("detail", "does not match kind"));
        }
        if let Some(rx) = self.t_received {
            if rx < self.t_detected {
                return Err(ValidationError::new("t_received", "precedes t_detected"));
            }
        }
        if let (Some(rx), Some(dx)) = (self.t_received, self.t_delivered) {
            if dx < rx {
                return Err(ValidationError::new("t_delivered", "precedes t_received"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} '{token}'")]
pub struct ParseEnumError {
    pub kind: &'static str,
    pub token: String,
}

/// Closed string enum with a canonical lower_snake_case token per variant.
macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $token),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ParseEnumError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(ParseEnumError { kind: $kind, token: other.to_string() }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let token = String::deserialize(d)?;
                token.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

token_enum!(
    /// Activity classes the recognizer may report.
    Activity, "activity", {
        Drinking => "drinking",
        PuttingOnGlasses => "putting_on_glasses",
        PuttingOnJacket => "putting_on_jacket",
        Reading => "reading",
        SittingDown => "sitting_down",
        StandingUp => "standing_up",
        TakingOffGlasses => "taking_off_glasses",
        TakingOffJacket => "taking_off_jacket",
        Writing => "writing",
        Unidentifiable => "unidentifiable",
    }
);

token_enum!(
    /// Emotion classes the recognizer may report.
    Emotion, "emotion", {
        Angry => "angry",
        Disgust => "disgust",
        Happy => "happy",
        Neutral => "neutral",
        Sad => "sad",
        Unidentifiable => "unidentifiable",
    }
);

token_enum!(
    /// A single numeric vital-sign field.
    Sign, "sign", {
        Temp => "temp",
        Hr => "hr",
        Rr => "rr",
        Sys => "sys",
        Dia => "dia",
        Spo2 => "spo2",
    }
);

token_enum!(
    /// The five monitored vital signs as a clinician names them.
    VitalKind, "vital sign", {
        Temperature => "temperature",
        HeartRate => "heart_rate",
        RespirationRate => "respiration_rate",
        BloodPressure => "blood_pressure",
        Spo2 => "spo2",
    }
);

impl Sign {
    pub fn unit(&self) -> &'static str {
        match self {
            Sign::Temp => "°C",
            Sign::Hr => "bpm",
            Sign::Rr => "breaths/min",
            Sign::Sys | Sign::Dia => "mmHg",
            Sign::Spo2 => "%",
        }
    }
}

impl VitalKind {
    /// Sample fields backing this vital sign.
    pub fn signs(&self) -> &'static [Sign] {
        match self {
            VitalKind::Temperature => &[Sign::Temp],
            VitalKind::HeartRate => &[Sign::Hr],
            VitalKind::RespirationRate => &[Sign::Rr],
            VitalKind::BloodPressure => &[Sign::Sys, Sign::Dia],
            VitalKind::Spo2 => &[Sign::Spo2],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VitalKind::Temperature => "temperature",
            VitalKind::HeartRate => "heart rate",
            VitalKind::RespirationRate => "respiration rate",
            VitalKind::BloodPressure => "blood pressure",
            VitalKind::Spo2 => "SpO2",
        }
    }

    pub fn unit(&self) -> &'static str {
        self.signs()[0].unit()
    }
}

/// Inclusive healthy interval; `hi = None` means no upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthyRange {
    pub lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

impl HealthyRange {
    pub const fn bounded(lo: f64, hi: f64) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub const fn at_least(lo: f64) -> Self {
        Self { lo, hi: None }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && self.hi.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalRanges {
    pub temp: HealthyRange,
    pub hr: HealthyRange,
    pub rr: HealthyRange,
    pub sys: HealthyRange,
    pub dia: HealthyRange,
    pub spo2: HealthyRange,
}

impl Default for VitalRanges {
    fn default() -> Self {
        Self {
            temp: HealthyRange::bounded(36.5, 37.2),
            hr: HealthyRange::bounded(60.0, 100.0),
            rr: HealthyRange::bounded(12.0, 20.0),
            sys: HealthyRange::bounded(90.0, 120.0),
            dia: HealthyRange::bounded(60.0, 80.0),
            spo2: HealthyRange::at_least(95.0),
        }
    }
}

impl VitalRanges {
    pub fn get(&self, sign: Sign) -> HealthyRange {
        match sign {
            Sign::Temp => self.temp,
            Sign::Hr => self.hr,
            Sign::Rr => self.rr,
            Sign::Sys => self.sys,
            Sign::Dia => self.dia,
            Sign::Spo2 => self.spo2,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, crate::Error> {
        let ranges: VitalRanges = serde_json::from_str(text)?;
        ranges.validate()?;
        Ok(ranges)
    }
}

impl Validate for VitalRanges {
    fn validate(&self) -> Result<(), ValidationError> {
        for &sign in Sign::ALL {
            let r = self.get(sign);
            finite(sign.as_str(), r.lo)?;
            if let Some(hi) = r.hi {
                finite(sign.as_str(), hi)?;
                if r.lo > hi {
                    return Err(ValidationError::new(sign.as_str(), "lo > hi"));
                }
            }
        }
        Ok(())
    }
}
