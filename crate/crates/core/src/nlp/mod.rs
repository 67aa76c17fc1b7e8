//! Clinician assistant: intent detection, data preparation, and answer
//! production, each with an offline deterministic backend and an external
//! model backend.

pub mod intent;
pub mod llm;
pub mod metrics;
pub mod plot;
pub mod prompt;
pub mod recognize;

use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{day_start_ms, hhmm, utc_date, utc_datetime, Emotion, Patient, SnapshotRef, VitalKind, VitalSample, MS_PER_DAY};
use crate::edge::{InstantData, LatestCache};
use crate::store::{Kind, Query, Record, Store, StoreError, TimeRange};

pub use intent::{Grammar, IntentError, IntentRecord};
pub use llm::{ChatRequest, LlmError, TextModel, TokenBucket};
pub use metrics::{evaluate_recognition, Labeled, RecognitionMetrics, TaskMetrics};
pub use plot::{make_plot, EmptyData, PlotSpec};
pub use prompt::{EndpointPrompt, Prompts};
pub use recognize::{map_reply, recognize_stub, RecognitionResult, RecognizeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    EdgeInstant,
    StoreHistorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPlan {
    pub source: Source,
    pub needs_recognition: bool,
    pub needs_plot: bool,
    pub needs_image: bool,
    pub dates: Vec<NaiveDate>,
    pub time_ranges: Vec<TimeRange>,
}

/// Instant data when both lists are empty, else history; a time-only intent
/// means today.
pub fn plan(intent: &IntentRecord, today: NaiveDate) -> DataPlan {
    let source = if intent.is_instant() {
        Source::EdgeInstant
    } else {
        Source::StoreHistorical
    };
    let dates = if source == Source::StoreHistorical && intent.list_date.is_empty() {
        vec![today]
    } else {
        intent.list_date.clone()
    };
    DataPlan {
        source,
        needs_recognition: intent.is_recognition,
        needs_plot: intent.is_plot,
        needs_image: intent.is_image,
        dates,
        time_ranges: intent.list_time.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("edge unreachable: {0}")]
    Unreachable(String),
}

/// Where instant data comes from (the edge node's cache, usually over HTTP).
pub trait InstantSource: Send + Sync {
    fn instant(&self, patient_id: &str) -> Result<InstantData, FetchError>;
}

impl InstantSource for LatestCache {
    fn instant(&self, patient_id: &str) -> Result<InstantData, FetchError> {
        LatestCache::instant(self, patient_id, crate::domain::now_ms())
            .map_err(|e| FetchError::UnknownPatient(e.0))
    }
}

/// Instant source for a cloud without an edge.
pub struct NoEdge;

impl InstantSource for NoEdge {
    fn instant(&self, _: &str) -> Result<InstantData, FetchError> {
        Err(FetchError::Unreachable("no edge configured".into()))
    }
}

/// Patient personal information.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    pub patients: Vec<Patient>,
}

impl Registry {
    pub fn get(&self, patient_id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }

    pub fn contains(&self, patient_id: &str) -> bool {
        self.get(patient_id).is_some()
    }

    pub fn grammar(&self) -> Grammar {
        self.patients
            .iter()
            .fold(Grammar::new(), |g, p| g.with_patient(&p.patient_id, &p.name))
    }
}

#[derive(Clone)]
pub enum IntentBackend {
    Grammar,
    Llm(Arc<dyn TextModel>),
}

#[derive(Clone)]
pub enum RecognizerBackend {
    Stub,
    Mllm {
        model: Arc<dyn TextModel>,
        fallback_to_stub: bool,
    },
}

#[derive(Clone)]
pub enum ComposerBackend {
    Template,
    Llm(Arc<dyn TextModel>),
}

/// Per-stage wall time in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub intent_ms: f64,
    pub fetch_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognize_ms: Option<f64>,
    pub compose_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantResponse {
    pub answer_text: String,
    pub plot: Option<PlotSpec>,
    pub image: Option<SnapshotRef>,
    pub intent: IntentRecord,
    pub source: Source,
    pub recognition: Option<RecognitionResult>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssistantError {
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error(transparent)]
    Recognize(#[from] RecognizeError),
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Data gathered for one question.
#[derive(Debug, Default)]
struct Gathered {
    vitals: Vec<VitalSample>,
    snapshot: Option<SnapshotRef>,
    notes: Vec<String>,
    failure: Option<String>,
}

pub struct Engine {
    pub registry: Registry,
    pub intent: IntentBackend,
    pub recognizer: RecognizerBackend,
    pub composer: ComposerBackend,
    pub prompts: Prompts,
    grammar: Grammar,
}

impl Engine {
    /// All-offline engine: grammar, stub recognizer, template answers.
    pub fn offline(registry: Registry) -> Self {
        Self::new(registry, IntentBackend::Grammar, RecognizerBackend::Stub, ComposerBackend::Template)
    }

    pub fn new(
        registry: Registry,
        intent: IntentBackend,
        recognizer: RecognizerBackend,
        composer: ComposerBackend,
    ) -> Self {
        let grammar = registry.grammar();
        Self {
            registry,
            intent,
            recognizer,
            composer,
            prompts: Prompts::default(),
            grammar,
        }
    }

    pub fn with_prompts(mut self, prompts: Prompts) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn detect_intent(&self, question: &str, now: i64) -> Result<IntentRecord, IntentError> {
        match &self.intent {
            IntentBackend::Grammar => self.grammar.detect(question, now),
            IntentBackend::Llm(m) => intent::detect_with_model(m.as_ref(), &self.prompts.intent, question, now),
        }
    }

    pub fn recognize(&self, s: &SnapshotRef) -> Result<RecognitionResult, RecognizeError> {
        match &self.recognizer {
            RecognizerBackend::Stub => Ok(recognize_stub(s)),
            RecognizerBackend::Mllm { model, fallback_to_stub } => {
                match recognize::recognize_with_model(model.as_ref(), &self.prompts.recognition, s) {
                    Err(e) if *fallback_to_stub => {
                        log::warn!("recognition falling back to stub: {e}");
                        Ok(recognize_stub(s))
                    }
                    other => other,
                }
            }
        }
    }

    /// Intent → plan → fetch → recognize → plot → compose.
    pub fn answer(
        &self,
        question: &str,
        now: i64,
        edge: &dyn InstantSource,
        store: &Store,
    ) -> Result<AssistantResponse, AssistantError> {
        let t_total = Instant::now();
        let t = Instant::now();
        let intent = self.detect_intent(question, now)?;
        let intent_ms = ms_since(t);

        let t = Instant::now();
        let plan = plan(&intent, utc_date(now));
        let pid = intent.patient_id.clone();
        let gathered = match plan.source {
            Source::EdgeInstant => self.fetch_instant(&pid, edge)?,
            Source::StoreHistorical => self.fetch_history(&pid, &plan, store)?,
        };
        let fetch_ms = ms_since(t);

        let mut recognition = None;
        let mut recognize_ms = None;
        if plan.needs_recognition {
            let t = Instant::now();
            if let Some(s) = &gathered.snapshot {
                recognition = Some(self.recognize(s)?);
            }
            recognize_ms = Some(ms_since(t));
        }

        let t = Instant::now();
        let signs = intent.signs();
        let plot = if plan.needs_plot {
            make_plot(&pid, &gathered.vitals, &intent.vital_sign).ok()
        } else {
            None
        };
        let image = if plan.needs_image { gathered.snapshot.clone() } else { None };
        let endpoint = EndpointPrompt {
            system_preamble: self.prompts.preamble.clone(),
            patient_info: prompt::patient_block(&pid, self.registry.get(&pid), now),
            recognition: recognition
                .as_ref()
                .zip(gathered.snapshot.as_ref())
                .map(|(r, s)| prompt::recognition_block(r, s.t)),
            vitals: prompt::vitals_block(&gathered.vitals, &signs),
            question: question.to_string(),
        };
        let answer_text = match (&gathered.failure, &self.composer) {
            (Some(f), _) => format!("Sorry, I could not retrieve data for patient {pid}: {f}"),
            (None, ComposerBackend::Template) => {
                template_answer(&intent, &plan, &gathered, recognition.as_ref(), plot.as_ref(), image.is_some())
            }
            (None, ComposerBackend::Llm(m)) => m
                .complete(&ChatRequest::text(&self.prompts.preamble, &endpoint.render()))
                .map_err(|e| AssistantError::LlmUnavailable(e.to_string()))?,
        };
        let compose_ms = ms_since(t);

        Ok(AssistantResponse {
            answer_text,
            plot,
            image,
            intent,
            source: plan.source,
            recognition,
            timings: Timings {
                intent_ms,
                fetch_ms,
                recognize_ms,
                compose_ms,
                total_ms: ms_since(t_total),
            },
        })
    }

    fn fetch_instant(&self, pid: &str, edge: &dyn InstantSource) -> Result<Gathered, AssistantError> {
        match edge.instant(pid) {
            Ok(d) => Ok(Gathered {
                vitals: d.vitals.into_iter().collect(),
                snapshot: d.snapshot,
                ..Default::default()
            }),
            Err(FetchError::UnknownPatient(_)) if self.registry.contains(pid) => Ok(Gathered {
                notes: vec![format!("The edge device has no live data for patient {pid}.")],
                ..Default::default()
            }),
            Err(FetchError::UnknownPatient(_)) => Err(AssistantError::UnknownPatient(pid.into())),
            Err(FetchError::Unreachable(e)) => Ok(Gathered {
                failure: Some(format!("the edge device is unreachable ({e})")),
                ..Default::default()
            }),
        }
    }

    fn fetch_history(&self, pid: &str, plan: &DataPlan, store: &Store) -> Result<Gathered, AssistantError> {
        if !self.registry.contains(pid) && !store.has_patient(pid) {
            return Err(AssistantError::UnknownPatient(pid.into()));
        }
        let query = |kind, time_ranges: &[TimeRange]| -> Result<Vec<Record>, StoreError> {
            match store.query(&Query {
                patient_id: pid.into(),
                dates: plan.dates.clone(),
                time_ranges: time_ranges.to_vec(),
                kind,
            }) {
                Err(StoreError::UnknownPatient(_)) => Ok(Vec::new()),
                other => other,
            }
        };
        let mut g = Gathered::default();
        match query(Kind::Vitals, &plan.time_ranges) {
            Ok(records) => {
                g.vitals = records
                    .into_iter()
                    .filter_map(|r| match r {
                        Record::Vitals(v) => Some(v),
                        Record::Snapshot(_) => None,
                    })
                    .collect()
            }
            Err(e) => {
                g.failure = Some(format!("the store query failed ({e})"));
                return Ok(g);
            }
        }
        if plan.needs_recognition || plan.needs_image {
            let target = nearest_target(plan);
            match query(Kind::Snapshots, &[]) {
                Ok(records) => {
                    g.snapshot = records
                        .into_iter()
                        .filter_map(|r| match r {
                            Record::Snapshot(s) => Some(s),
                            Record::Vitals(_) => None,
                        })
                        .min_by_key(|s| ((s.t - target).abs(), s.t));
                }
                Err(e) => g.failure = Some(format!("the store query failed ({e})")),
            }
        }
        Ok(g)
    }
}

/// Reference instant for picking a historical snapshot: the middle of the
/// first requested time range on the first date, else the end of the last
/// date.
fn nearest_target(plan: &DataPlan) -> i64 {
    match (plan.dates.first(), plan.time_ranges.first()) {
        (Some(d), Some(r)) => day_start_ms(*d) + (i64::from(r.from_min) + i64::from(r.to_min)) * 30_000,
        (_, None) => plan.dates.last().map_or(0, |d| day_start_ms(*d) + MS_PER_DAY - 1),
        (None, Some(_)) => 0,
    }
}

fn emotion_word(e: Emotion) -> &'static str {
    match e {
        Emotion::Disgust => "disgusted",
        other => other.as_str(),
    }
}

fn period_phrase(plan: &DataPlan) -> String {
    let dates = match plan.dates.as_slice() {
        [] => String::new(),
        [d] => format!("on {d}"),
        [first, .., last] => format!("from {first} to {last}"),
    };
    if plan.time_ranges.is_empty() {
        dates
    } else {
        let ranges: Vec<String> = plan
            .time_ranges
            .iter()
            .map(|r| format!("{}-{}", crate::store::fmt_hhmm(r.from_min), crate::store::fmt_hhmm(r.to_min)))
            .collect();
        format!("{dates} during {} UTC", ranges.join(", "))
    }
}

fn template_answer(
    intent: &IntentRecord,
    plan: &DataPlan,
    g: &Gathered,
    recognition: Option<&RecognitionResult>,
    plot: Option<&PlotSpec>,
    has_image: bool,
) -> String {
    let pid = &intent.patient_id;
    let mut out: Vec<String> = g.notes.clone();
    let wants_vitals = !intent.vital_sign.is_empty() || !(intent.is_recognition || intent.is_image);
    let signs = intent.signs();

    if wants_vitals && (!intent.is_plot || plan.source == Source::EdgeInstant) {
        match plan.source {
            Source::EdgeInstant => match g.vitals.last() {
                Some(v) => {
                    for &k in &signs {
                        out.push(format!("The current {} of patient {pid} is {}.", k.label(), prompt::sign_value(v, k)));
                    }
                    out.push(format!("Latest reading at {} UTC.", utc_datetime(v.t).format("%H:%M:%S")));
                }
                None => out.push(format!("No live vital signs are available for patient {pid}.")),
            },
            Source::StoreHistorical => {
                if g.vitals.is_empty() {
                    out.push(format!("No vital-sign data for patient {pid} {}.", period_phrase(plan)));
                } else {
                    for &k in &signs {
                        out.push(summary_sentence(pid, k, &g.vitals, plan));
                    }
                }
            }
        }
    }

    if intent.is_recognition {
        let prefix = match (plan.source, &g.snapshot) {
            (Source::StoreHistorical, Some(s)) => format!(
                "Based on the snapshot nearest the requested time ({} UTC on {}), ",
                hhmm(s.t),
                utc_date(s.t)
            ),
            _ => String::new(),
        };
        let sentence = match recognition {
            None => format!("No snapshot is available to recognize the activity of patient {pid}."),
            Some(r) => {
                let activity = (r.activity != crate::domain::Activity::Unidentifiable)
                    .then(|| r.activity.as_str().replace('_', " "));
                let emotion = (r.emotion != Emotion::Unidentifiable).then(|| emotion_word(r.emotion));
                match (activity, emotion) {
                    (Some(a), Some(e)) => format!("patient {pid} appears to be {a} and looks {e}."),
                    (Some(a), None) => {
                        format!("patient {pid} appears to be {a}; their emotion could not be identified.")
                    }
                    (None, Some(e)) => format!("the activity of patient {pid} could not be identified; they look {e}."),
                    (None, None) => format!("the activity and emotion of patient {pid} could not be identified."),
                }
            }
        };
        out.push(capitalize(&format!("{prefix}{sentence}")));
    }

    if intent.is_plot {
        match plot {
            Some(p) => {
                let names: Vec<&str> = p.series.iter().map(|s| s.sign.label()).collect();
                let n = p.series.first().map_or(0, |s| s.points.len());
                out.push(format!(
                    "A plot of {} for patient {pid} with {n} readings is attached.",
                    names.join(", ")
                ));
            }
            None => out.push(format!("No data in range to plot for patient {pid}.")),
        }
    }

    if intent.is_image {
        match (&g.snapshot, has_image) {
            (Some(s), true) => out.push(format!(
                "A snapshot from {} UTC is attached.",
                utc_datetime(s.t).format("%Y-%m-%d %H:%M:%S")
            )),
            _ => out.push(format!("No snapshot is available for patient {pid}.")),
        }
    }
    out.join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn summary_sentence(pid: &str, k: VitalKind, vitals: &[VitalSample], plan: &DataPlan) -> String {
    let stats = |sign| {
        let xs: Vec<f64> = vitals.iter().map(|v| v.get(sign)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, lo, hi)
    };
    let f = prompt::fmt_value;
    let body = match k {
        VitalKind::BloodPressure => {
            let (ms, ls, hs) = stats(crate::domain::Sign::Sys);
            let (md, ld, hd) = stats(crate::domain::Sign::Dia);
            format!(
                "mean {}/{} {} (range {}-{} / {}-{})",
                f(ms),
                f(md),
                k.unit(),
                f(ls),
                f(hs),
                f(ld),
                f(hd)
            )
        }
        _ => {
            let (m, lo, hi) = stats(k.signs()[0]);
            format!("mean {} {} (min {}, max {})", f(m), k.unit(), f(lo), f(hi))
        }
    };
    format!(
        "{} of patient {pid} {}: {} readings, {body}.",
        capitalize(k.label()),
        period_phrase(plan),
        vitals.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Activity;
    use crate::sim::placeholder_png;

    fn now() -> i64 {
        day_start_ms("2025-01-10".parse().unwrap()) + 9 * 3_600_000
    }

    fn intent(list_date: Vec<&str>, list_time: Vec<TimeRange>) -> IntentRecord {
        IntentRecord {
            list_date: list_date.into_iter().map(|d| d.parse().unwrap()).collect(),
            list_time,
            ..IntentRecord::instant("1")
        }
    }

    #[test]
    fn plan_routing() {
        let today: NaiveDate = "2025-01-10".parse().unwrap();
        assert_eq!(plan(&intent(vec![], vec![]), today).source, Source::EdgeInstant);
        let p = plan(&intent(vec!["2025-01-09"], vec![]), today);
        assert_eq!((p.source, p.dates.len()), (Source::StoreHistorical, 1));
        let p = plan(&intent(vec![], vec![TimeRange::new(540, 541).unwrap()]), today);
        assert_eq!(p.source, Source::StoreHistorical);
        assert_eq!(p.dates, vec![today]);
    }

    fn cache_with(hr: f64, label: (Activity, Emotion)) -> LatestCache {
        let cache = LatestCache::new();
        cache.update("7", now(), |l| {
            l.vitals = Some(VitalSample {
                t: now(),
                temp: 36.8,
                hr,
                rr: 16.0,
                sys: 110.0,
                dia: 70.0,
                spo2: 98.0,
            });
            l.snapshot = Some(SnapshotRef {
                t: now(),
                patient_id: "7".into(),
                mime: "image/png".into(),
                media: placeholder_png(label.0, label.1),
            });
        });
        cache
    }

    #[test]
    fn instant_heart_rate_template() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let e = Engine::offline(Registry::default());
        let cache = cache_with(72.0, (Activity::Reading, Emotion::Neutral));
        let r = e.answer("What is the current heart rate of patient 7?", now(), &cache, &store).unwrap();
        assert!(r.answer_text.contains("heart rate") && r.answer_text.contains("72"), "{}", r.answer_text);
        assert!(r.plot.is_none() && r.image.is_none());
        assert!(r.timings.recognize_ms.is_none());
    }

    #[test]
    fn recognition_answer_mentions_both() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let e = Engine::offline(Registry::default());
        let cache = cache_with(72.0, (Activity::Writing, Emotion::Sad));
        let r = e.answer("What is patient 7 doing?", now(), &cache, &store).unwrap();
        assert!(r.answer_text.contains("writing") && r.answer_text.contains("sad"), "{}", r.answer_text);
        assert!(r.image.is_none());
        assert!(r.timings.recognize_ms.is_some());
        let r = e.answer("What is patient 7 doing? Show me.", now(), &cache, &store).unwrap();
        assert!(r.image.is_some());
    }

    #[test]
    fn unreachable_edge_is_apologetic() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let e = Engine::offline(Registry::default());
        let r = e.answer("Heart rate of patient 7?", now(), &NoEdge, &store).unwrap();
        assert!(r.answer_text.starts_with("Sorry"), "{}", r.answer_text);
        assert!(matches!(
            e.answer("Heart rate of patient 7 yesterday?", now(), &NoEdge, &store),
            Err(AssistantError::UnknownPatient(_))
        ));
        assert!(matches!(
            e.answer("How is the weather?", now(), &NoEdge, &store),
            Err(AssistantError::Intent(IntentError::MissingPatient))
        ));
    }
}
