//! Cloud service: alert feed with server-push delivery, batch ingest, the
//! query API, and the assistant endpoint.

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use futures::Stream;
use remoni_core::domain::{now_ms, utc_date, Alert, SnapshotRef, Validate, VitalKind, VitalSample};
use remoni_core::fall::FallScore;
use remoni_core::nlp::{AssistantError, Engine, FetchError, InstantSource, IntentError, NoEdge, RecognizeError, Source};
use remoni_core::store::{Kind, Query, Record, Store, StoreError, TimeRange, UploadBatch, MINUTES_PER_DAY};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::clients::HttpEdgeSource;
use crate::error_body;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One alert in the feed with its 1-based position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub seq: u64,
    pub alert: Alert,
}

struct FeedState {
    log: Vec<Alert>,
    ids: HashSet<String>,
}

/// Ordered alert log. A single writer appends under the lock; subscribers
/// each hold a cursor into the log and wait on the length watch.
pub struct AlertFeed {
    state: Mutex<FeedState>,
    len: watch::Sender<u64>,
    journal: Option<mpsc::UnboundedSender<Alert>>,
}

/// Outcome of posting an alert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepted {
    pub seq: u64,
    pub duplicate: bool,
}

impl AlertFeed {
    pub fn in_memory() -> Self {
        Self::with_log(Vec::new(), None)
    }

    fn with_log(log: Vec<Alert>, journal: Option<mpsc::UnboundedSender<Alert>>) -> Self {
        let ids = log.iter().map(|a| a.alert_id.clone()).collect();
        let (len, _) = watch::channel(log.len() as u64);
        Self {
            state: Mutex::new(FeedState { log, ids }),
            len,
            journal,
        }
    }

    /// Loads the journal at `path`, skipping unreadable lines, and appends
    /// new alerts to it from a background writer.
    pub fn with_journal(path: PathBuf) -> std::io::Result<Self> {
        let mut log = Vec::new();
        let mut seen = HashSet::new();
        if path.exists() {
            for (i, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Alert>(&line) {
                    Ok(a) if seen.insert(a.alert_id.clone()) => log.push(a),
                    Ok(_) => {}
                    Err(e) => log::warn!("cloud: journal line {} skipped: {e}", i + 1),
                }
            }
            log::info!("cloud: recovered {} alerts from {}", log.len(), path.display());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (tx, mut rx) = mpsc::unbounded_channel::<Alert>();
        std::thread::Builder::new().name("alert-journal".into()).spawn(move || {
            while let Some(a) = rx.blocking_recv() {
                let line = serde_json::to_string(&a).expect("alert serializes");
                if let Err(e) = writeln!(file, "{line}").and_then(|_| file.sync_data()) {
                    log::error!("cloud: journal write failed: {e}");
                }
            }
        })?;
        Ok(Self::with_log(log, Some(tx)))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, FeedState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Stamps `t_received` and appends; a repeated `alert_id` is ignored.
    pub fn push(&self, mut alert: Alert) -> Accepted {
        let mut st = self.lock();
        if !st.ids.insert(alert.alert_id.clone()) {
            let seq = st.log.iter().position(|a| a.alert_id == alert.alert_id).map_or(0, |i| i as u64 + 1);
            return Accepted { seq, duplicate: true };
        }
        alert.t_received = Some(now_ms().max(alert.t_detected));
        alert.t_delivered = None;
        if let Some(j) = &self.journal {
            let _ = j.send(alert.clone());
        }
        st.log.push(alert);
        let seq = st.log.len() as u64;
        self.len.send_replace(seq);
        Accepted { seq, duplicate: false }
    }

    pub fn len(&self) -> usize {
        self.lock().log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Alerts after position `after`.
    pub fn since(&self, after: u64) -> Vec<FeedEntry> {
        let st = self.lock();
        st.log
            .iter()
            .enumerate()
            .skip(after as usize)
            .map(|(i, a)| FeedEntry {
                seq: i as u64 + 1,
                alert: a.clone(),
            })
            .collect()
    }

    /// Records the first delivery time on the logged copy.
    fn mark_delivered(&self, seq: u64, t: i64) {
        let mut st = self.lock();
        if let Some(a) = st.log.get_mut(seq as usize - 1) {
            a.t_delivered.get_or_insert(t);
        }
    }

    /// Entries strictly after `cursor`, in order, waiting for new ones.
    pub fn subscribe(self: &Arc<Self>, cursor: u64) -> impl Stream<Item = FeedEntry> + Send + 'static {
        let rx = self.len.subscribe();
        let feed = self.clone();
        futures::stream::unfold(
            (feed, rx, cursor, std::collections::VecDeque::new()),
            |(feed, mut rx, mut cursor, mut pending)| async move {
                loop {
                    if let Some(e) = pending.pop_front() {
                        return Some((e, (feed, rx, cursor, pending)));
                    }
                    rx.borrow_and_update();
                    let fresh = feed.since(cursor);
                    if let Some(last) = fresh.last() {
                        cursor = last.seq;
                        pending.extend(fresh);
                        continue;
                    }
                    if rx.changed().await.is_err() {
                        return None;
                    }
                }
            },
        )
    }
}

pub struct CloudConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub edge_url: Option<String>,
    pub engine: Engine,
    pub static_dir: Option<PathBuf>,
}

struct AppState {
    feed: Arc<AlertFeed>,
    store: Arc<Store>,
    engine: Arc<Engine>,
    edge: Option<Arc<HttpEdgeSource>>,
}

pub struct CloudHandle {
    pub addr: SocketAddr,
    pub feed: Arc<AlertFeed>,
    pub store: Arc<Store>,
    task: JoinHandle<()>,
}

impl CloudHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(self) {
        self.task.abort();
    }
}

pub async fn start(config: CloudConfig) -> Result<CloudHandle, CloudError> {
    let store = Arc::new(Store::open(config.data_dir.join("store"))?);
    let feed = Arc::new(AlertFeed::with_journal(config.data_dir.join("alerts.jsonl"))?);
    let edge = config.edge_url.as_deref().map(|u| Arc::new(HttpEdgeSource::new(u)));
    let state = Arc::new(AppState {
        feed: feed.clone(),
        store: store.clone(),
        engine: Arc::new(config.engine),
        edge,
    });
    let mut app = router(state);
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = TcpListener::bind(config.listen).await?;
    let addr = listener.local_addr()?;
    log::info!("cloud: listening on {addr}");
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("cloud: server stopped: {e}");
        }
    });
    Ok(CloudHandle { addr, feed, store, task })
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/alerts", post(post_alert).get(list_alerts))
        .route("/alerts/stream", get(alert_stream))
        .route("/ingest/batch", post(ingest_batch))
        .route("/patients", get(list_patients))
        .route("/patients/{id}/vitals", get(get_vitals))
        .route("/patients/{id}/latest", get(get_latest))
        .route("/chat", post(chat))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error_body(StatusCode::BAD_REQUEST, "SchemaViolation", &e.to_string()))
}

async fn post_alert(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let alert: Alert = match parse_body(&body) {
        Ok(a) => a,
        Err(r) => return r,
    };
    if let Err(e) = alert.validate() {
        return error_body(StatusCode::BAD_REQUEST, "SchemaViolation", &e.to_string());
    }
    let accepted = st.feed.push(alert);
    (StatusCode::ACCEPTED, Json(accepted)).into_response()
}

#[derive(Debug, Deserialize)]
struct AfterParam {
    after: Option<u64>,
}

async fn list_alerts(State(st): State<Arc<AppState>>, UrlQuery(p): UrlQuery<AfterParam>) -> Json<Vec<FeedEntry>> {
    Json(st.feed.since(p.after.unwrap_or(0)))
}

/// Event stream of the feed. The cursor comes from `Last-Event-ID` or
/// `?after=`; without one every logged alert is replayed first.
async fn alert_stream(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlQuery(p): UrlQuery<AfterParam>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let cursor = last_id.or(p.after).unwrap_or(0);
    let feed = st.feed.clone();
    let stream = futures::StreamExt::map(st.feed.subscribe(cursor), move |mut entry| {
        let t = now_ms().max(entry.alert.t_received.unwrap_or(i64::MIN));
        entry.alert.t_delivered = Some(t);
        feed.mark_delivered(entry.seq, t);
        let data = serde_json::to_string(&entry.alert).expect("alert serializes");
        Ok(Event::default().id(entry.seq.to_string()).event("alert").data(data))
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::UnknownPatient(p) => error_body(StatusCode::NOT_FOUND, "UnknownPatient", &p),
        StoreError::Invalid(v) => error_body(StatusCode::BAD_REQUEST, "SchemaViolation", &v.to_string()),
        StoreError::StorageFull => error_body(StatusCode::INSUFFICIENT_STORAGE, "StorageFull", "storage full"),
        other => error_body(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", &other.to_string()),
    }
}

async fn ingest_batch(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let batch: UploadBatch = match parse_body(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let store = st.store.clone();
    match tokio::task::spawn_blocking(move || store.append(&batch)).await {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Internal", &e.to_string()),
    }
}

async fn list_patients(State(st): State<Arc<AppState>>) -> Json<Vec<serde_json::Value>> {
    let mut out: Vec<serde_json::Value> = st
        .engine
        .registry
        .patients
        .iter()
        .map(|p| serde_json::to_value(p).expect("patient serializes"))
        .collect();
    for id in st.store.patients() {
        if !st.engine.registry.contains(&id) {
            out.push(serde_json::json!({ "patient_id": id }));
        }
    }
    Json(out)
}

/// Builds a store query from `dates`, `from`, `to`, `kind`; `sign` selects a
/// projection.
fn vitals_query(id: &str, params: &HashMap<String, String>) -> Result<(Query, Option<VitalKind>), String> {
    let dates = match params.get("dates").or_else(|| params.get("date")) {
        Some(s) => s
            .split(',')
            .filter(|d| !d.trim().is_empty())
            .map(|d| d.trim().parse::<NaiveDate>().map_err(|e| format!("date {d:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![utc_date(now_ms())],
    };
    let from = params.get("from").map(String::as_str).unwrap_or("00:00");
    let to = params.get("to").map(String::as_str);
    let range = match to {
        Some(to) => TimeRange::parse(from, to)?,
        None => TimeRange::new(remoni_core::store::parse_hhmm(from)?, MINUTES_PER_DAY)?,
    };
    let kind = match params.get("kind") {
        Some(k) => k.parse::<Kind>().map_err(|e| e.to_string())?,
        None => Kind::Vitals,
    };
    let sign = params
        .get("sign")
        .map(|s| s.parse::<VitalKind>().map_err(|e| e.to_string()))
        .transpose()?;
    Ok((
        Query {
            patient_id: id.to_string(),
            dates,
            time_ranges: vec![range],
            kind,
        },
        sign,
    ))
}

async fn get_vitals(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    UrlQuery(params): UrlQuery<HashMap<String, String>>,
) -> Response {
    let (q, sign) = match vitals_query(&id, &params) {
        Ok(x) => x,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "SchemaViolation", &e),
    };
    let store = st.store.clone();
    let known = st.engine.registry.contains(&id);
    match tokio::task::spawn_blocking(move || store.query(&q)).await {
        Ok(Ok(records)) => Json(records.iter().map(|r| r.project(sign)).collect::<Vec<_>>()).into_response(),
        Ok(Err(StoreError::UnknownPatient(_))) if known => Json(Vec::<serde_json::Value>::new()).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Internal", &e.to_string()),
    }
}

/// Latest known state of a patient and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatestView {
    pub patient_id: String,
    pub source: Source,
    pub vitals: Option<VitalSample>,
    pub snapshot: Option<SnapshotRef>,
    pub fall_score: Option<FallScore>,
    pub t: Option<i64>,
    pub staleness_ms: Option<i64>,
}

fn store_latest(store: &Store, id: &str) -> Result<LatestView, StoreError> {
    if !store.has_patient(id) {
        return Err(StoreError::UnknownPatient(id.to_string()));
    }
    let vitals = match store.latest(id, Kind::Vitals)? {
        Some(Record::Vitals(v)) => Some(v),
        _ => None,
    };
    let snapshot = match store.latest(id, Kind::Snapshots)? {
        Some(Record::Snapshot(s)) => Some(s),
        _ => None,
    };
    let t = vitals.map(|v| v.t).into_iter().chain(snapshot.as_ref().map(|s| s.t)).max();
    Ok(LatestView {
        patient_id: id.to_string(),
        source: Source::StoreHistorical,
        vitals,
        snapshot,
        fall_score: None,
        t,
        staleness_ms: t.map(|t| (now_ms() - t).max(0)),
    })
}

async fn get_latest(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let edge_result = match &st.edge {
        Some(edge) => {
            let edge = edge.clone();
            let pid = id.clone();
            Some(
                tokio::task::spawn_blocking(move || edge.instant(&pid))
                    .await
                    .unwrap_or_else(|e| Err(FetchError::Unreachable(e.to_string()))),
            )
        }
        None => None,
    };
    if let Some(Ok(d)) = edge_result {
        return Json(LatestView {
            patient_id: d.patient_id,
            source: Source::EdgeInstant,
            vitals: d.vitals,
            snapshot: d.snapshot,
            fall_score: d.fall_score,
            t: Some(d.t),
            staleness_ms: Some(d.staleness_ms),
        })
        .into_response();
    }
    let store = st.store.clone();
    let pid = id.clone();
    let fallback = tokio::task::spawn_blocking(move || store_latest(&store, &pid))
        .await
        .unwrap_or_else(|e| Err(StoreError::Io(std::io::Error::other(e.to_string()))));
    match edge_result {
        Some(Err(FetchError::Unreachable(detail))) => {
            let body = serde_json::json!({
                "error": "EdgeUnreachable",
                "detail": detail,
                "fallback": fallback.ok(),
            });
            (StatusCode::BAD_GATEWAY, Json(body)).into_response()
        }
        _ => match fallback {
            Ok(view) => Json(view).into_response(),
            Err(e) => store_error(e),
        },
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatBody {
    question: String,
    /// Clock override in ms epoch, for reproducible questions about "today".
    #[serde(default)]
    now: Option<i64>,
}

fn assistant_error(e: AssistantError) -> Response {
    let detail = e.to_string();
    match e {
        AssistantError::Intent(IntentError::LlmUnavailable(_))
        | AssistantError::LlmUnavailable(_)
        | AssistantError::Recognize(RecognizeError::MllmUnavailable(_)) => {
            error_body(StatusCode::SERVICE_UNAVAILABLE, "LlmUnavailable", &detail)
        }
        AssistantError::UnknownPatient(_) => error_body(StatusCode::NOT_FOUND, "UnknownPatient", &detail),
        AssistantError::Intent(IntentError::EmptyQuestion) => error_body(StatusCode::BAD_REQUEST, "EmptyQuestion", &detail),
        AssistantError::Intent(IntentError::MissingPatient) => {
            error_body(StatusCode::BAD_REQUEST, "MissingPatient", &detail)
        }
        AssistantError::Intent(IntentError::LlmSchemaError(_)) => {
            error_body(StatusCode::BAD_GATEWAY, "LlmSchemaError", &detail)
        }
    }
}

async fn chat(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ChatBody = match parse_body(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let engine = st.engine.clone();
    let store = st.store.clone();
    let edge = st.edge.clone();
    let now = req.now.unwrap_or_else(now_ms);
    let result = tokio::task::spawn_blocking(move || {
        let source: &dyn InstantSource = match &edge {
            Some(e) => e.as_ref(),
            None => &NoEdge,
        };
        engine.answer(&req.question, now, source, &store)
    })
    .await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => assistant_error(e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Internal", &e.to_string()),
    }
}
