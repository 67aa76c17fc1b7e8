//! Latency statistics and the benchmark report schema.

use serde::{Deserialize, Serialize};

use crate::domain::{Alert, AlertKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p95: f64,
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = (q * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

impl Stats {
    pub fn of(samples: &[f64]) -> Option<Stats> {
        let n = samples.len();
        if n == 0 {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Stats {
            n,
            mean,
            std: var.sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            p95: percentile(samples, 0.95)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertSample {
    pub run: usize,
    pub alert_id: String,
    pub kind: AlertKind,
    pub t_detected: i64,
    pub t_received: i64,
    pub t_delivered: i64,
    pub detect_to_receive_ms: f64,
    pub detect_to_deliver_ms: f64,
}

impl AlertSample {
    pub fn from_alert(run: usize, a: &Alert) -> Option<Self> {
        let (r, d) = (a.t_received?, a.t_delivered?);
        Some(Self {
            run,
            alert_id: a.alert_id.clone(),
            kind: a.kind,
            t_detected: a.t_detected,
            t_received: r,
            t_delivered: d,
            detect_to_receive_ms: (r - a.t_detected) as f64,
            detect_to_deliver_ms: (d - a.t_detected) as f64,
        })
    }
}

/// The four assistant question types timed by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    ImageRetrieval,
    VitalSignRetrieval,
    ImageDescription,
    Plotting,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::ImageRetrieval,
        QuestionType::VitalSignRetrieval,
        QuestionType::ImageDescription,
        QuestionType::Plotting,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            QuestionType::ImageRetrieval => "image retrieval",
            QuestionType::VitalSignRetrieval => "vital-sign retrieval",
            QuestionType::ImageDescription => "image description",
            QuestionType::Plotting => "plotting",
        }
    }

    /// Example question of this type about `patient_id`.
    pub fn question(&self, patient_id: &str) -> String {
        match self {
            QuestionType::ImageRetrieval => format!("Show me a picture of patient {patient_id}."),
            QuestionType::VitalSignRetrieval => format!("What is the current heart rate of patient {patient_id}?"),
            QuestionType::ImageDescription => format!("What is patient {patient_id} doing right now?"),
            QuestionType::Plotting => format!("Plot patient {patient_id}'s temperature today."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTiming {
    pub question_type: QuestionType,
    pub question: String,
    /// Total response time per repetition, ms.
    pub samples_ms: Vec<f64>,
    pub total: Option<Stats>,
    /// Mean recognition stage time, present for recognition questions.
    pub recognize_mean_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario_id: String,
    pub runs: usize,
    pub expected_alerts: usize,
    pub alerts: Vec<AlertSample>,
    pub detect_to_receive: Option<Stats>,
    pub detect_to_deliver: Option<Stats>,
    pub chat: Vec<ChatTiming>,
}

impl BenchReport {
    pub fn new(scenario_id: &str, runs: usize, expected_alerts: usize, alerts: Vec<AlertSample>, chat: Vec<ChatTiming>) -> Self {
        let recv: Vec<f64> = alerts.iter().map(|a| a.detect_to_receive_ms).collect();
        let deliv: Vec<f64> = alerts.iter().map(|a| a.detect_to_deliver_ms).collect();
        Self {
            scenario_id: scenario_id.into(),
            runs,
            expected_alerts,
            detect_to_receive: Stats::of(&recv),
            detect_to_deliver: Stats::of(&deliv),
            alerts,
            chat,
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "scenario {}  runs {}  alerts {}/{}\n",
            self.scenario_id,
            self.runs,
            self.alerts.len(),
            self.expected_alerts
        );
        out.push_str(&format!("{:<28}{:>10}{:>10}{:>10}{:>10}\n", "latency (ms)", "mean", "p95", "min", "max"));
        for (name, s) in [
            ("detected -> received", &self.detect_to_receive),
            ("detected -> delivered", &self.detect_to_deliver),
        ] {
            match s {
                Some(s) => out.push_str(&format!(
                    "{name:<28}{:>10.1}{:>10.1}{:>10.1}{:>10.1}\n",
                    s.mean, s.p95, s.min, s.max
                )),
                None => out.push_str(&format!("{name:<28}{:>10}\n", "-")),
            }
        }
        if !self.chat.is_empty() {
            out.push_str(&format!("{:<28}{:>10}{:>10}{:>10}\n", "chat (ms)", "mean", "std", "n"));
            for c in &self.chat {
                match &c.total {
                    Some(s) => out.push_str(&format!(
                        "{:<28}{:>10.1}{:>10.1}{:>10}\n",
                        c.question_type.label(),
                        s.mean,
                        s.std,
                        s.n
                    )),
                    None => out.push_str(&format!("{:<28}{:>10}\n", c.question_type.label(), "-")),
                }
            }
        }
        out
    }
}
