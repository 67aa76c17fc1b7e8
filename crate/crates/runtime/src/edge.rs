//! Edge node: terminates ingest sessions, runs detection in-line, pushes
//! alerts to the cloud immediately, and uploads batches periodically.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use remoni_core::domain::{now_ms, Alert};
use remoni_core::edge::{BatchAssembler, LatestCache, Pipeline, Upload};
use remoni_core::fall::Detector;
use remoni_core::protocol::{Frame, FrameDecoder, Session};
use remoni_core::store::UploadBatch;
use remoni_core::vitals::GuardConfig;
use serde::Serialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::error_body;

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub listen: SocketAddr,
    pub instant_listen: SocketAddr,
    /// Cloud base URL; alerts and batches are dropped with a warning when
    /// unset.
    pub cloud_url: Option<String>,
    pub detector: Detector,
    pub guard: GuardConfig,
    pub upload_period_ms: i64,
}

impl EdgeConfig {
    pub fn local(cloud_url: Option<String>) -> Self {
        Self {
            listen: ([127, 0, 0, 1], 0).into(),
            instant_listen: ([127, 0, 0, 1], 0).into(),
            cloud_url,
            detector: Detector::default(),
            guard: GuardConfig::default(),
            upload_period_ms: remoni_core::edge::DEFAULT_UPLOAD_PERIOD_S as i64 * 1000,
        }
    }
}

/// Counters exposed on `GET /stats`.
#[derive(Debug, Default, Clone, Serialize)]
pub struct EdgeStats {
    /// patient → frame kind → frames accepted.
    pub frames: BTreeMap<String, BTreeMap<String, u64>>,
    pub sessions_rejected: u64,
    pub alerts_dispatched: u64,
    pub alerts_failed: u64,
    pub batches_uploaded: u64,
    pub batches_retained: u64,
    pub records_uploaded: u64,
}

struct Shared {
    cache: Arc<LatestCache>,
    stats: Mutex<EdgeStats>,
    detector: Arc<Detector>,
    guard: GuardConfig,
    alerts: mpsc::UnboundedSender<Alert>,
    uploads: mpsc::UnboundedSender<UploaderMsg>,
}

impl Shared {
    fn stat(&self, f: impl FnOnce(&mut EdgeStats)) {
        f(&mut self.stats.lock().unwrap_or_else(|e| e.into_inner()));
    }
}

enum UploaderMsg {
    Items {
        patient_id: String,
        items: Vec<Upload>,
        t: Option<i64>,
    },
    Flush(String),
    FlushAll(oneshot::Sender<()>),
}

pub struct EdgeHandle {
    pub ingest_addr: SocketAddr,
    pub instant_addr: SocketAddr,
    shared: Arc<Shared>,
    tasks: Vec<JoinHandle<()>>,
}

impl EdgeHandle {
    pub fn cache(&self) -> &LatestCache {
        &self.shared.cache
    }

    pub fn stats(&self) -> EdgeStats {
        self.shared.stats.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Flushes open upload intervals and waits for their delivery attempt.
    pub async fn flush_uploads(&self) {
        let (tx, rx) = oneshot::channel();
        if self.shared.uploads.send(UploaderMsg::FlushAll(tx)).is_ok() {
            let _ = rx.await;
        }
    }

    pub async fn shutdown(self) {
        self.flush_uploads().await;
        for t in &self.tasks {
            t.abort();
        }
    }
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .timeout(Duration::from_secs(5))
        .build()
        .expect("http client")
}

pub async fn start(config: EdgeConfig) -> std::io::Result<EdgeHandle> {
    let ingest = TcpListener::bind(config.listen).await?;
    let instant = TcpListener::bind(config.instant_listen).await?;
    let (alert_tx, alert_rx) = mpsc::unbounded_channel();
    let (upload_tx, upload_rx) = mpsc::unbounded_channel();
    let shared = Arc::new(Shared {
        cache: Arc::new(LatestCache::new()),
        stats: Mutex::new(EdgeStats::default()),
        detector: Arc::new(config.detector.clone()),
        guard: config.guard,
        alerts: alert_tx,
        uploads: upload_tx,
    });
    let client = http_client();
    let handle = EdgeHandle {
        ingest_addr: ingest.local_addr()?,
        instant_addr: instant.local_addr()?,
        shared: shared.clone(),
        tasks: vec![
            tokio::spawn(dispatch_alerts(alert_rx, client.clone(), config.cloud_url.clone(), shared.clone())),
            tokio::spawn(run_uploader(
                upload_rx,
                client,
                config.cloud_url.clone(),
                config.upload_period_ms,
                shared.clone(),
            )),
            tokio::spawn(accept_loop(ingest, shared.clone())),
            tokio::spawn(serve_instant(instant, shared.clone())),
        ],
    };
    log::info!(
        "edge: ingest on {}, instant data on {}",
        handle.ingest_addr,
        handle.instant_addr
    );
    Ok(handle)
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let _ = stream.set_nodelay(true);
                tokio::spawn(handle_connection(stream, peer, shared.clone()));
            }
            Err(e) => {
                log::warn!("edge: accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

async fn handle_connection(mut stream: TcpStream, peer: SocketAddr, shared: Arc<Shared>) {
    let mut decoder = FrameDecoder::new();
    let mut session = Session::new();
    let mut pipeline: Option<Pipeline> = None;
    let mut buf = vec![0u8; 64 * 1024];
    let reason = 'session: loop {
        let n = match stream.read(&mut buf).await {
            Ok(0) => break 'session "disconnected".to_string(),
            Ok(n) => n,
            Err(e) => break 'session format!("read error: {e}"),
        };
        decoder.feed(&buf[..n]);
        loop {
            let frame = match decoder.next_frame() {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => break 'session format!("protocol error: {e}"),
            };
            if let Err(e) = session.accept(&frame) {
                break 'session format!("protocol error: {e}");
            }
            if let Frame::Hello { patient_id, .. } = &frame {
                pipeline = Some(Pipeline::new(patient_id, shared.detector.clone(), shared.guard));
            }
            let p = pipeline.as_mut().expect("session accepted hello first");
            let patient_id = p.patient_id().to_string();
            shared.stat(|s| {
                *s.frames
                    .entry(patient_id.clone())
                    .or_default()
                    .entry(frame.kind().as_str().to_string())
                    .or_default() += 1
            });
            let outcome = p.on_frame(&frame, &shared.cache, now_ms);
            for alert in outcome.alerts {
                log::info!("edge: alert {}", alert.alert_id);
                let _ = shared.alerts.send(alert);
            }
            if !outcome.uploads.is_empty() || outcome.t.is_some() {
                let _ = shared.uploads.send(UploaderMsg::Items {
                    patient_id: patient_id.clone(),
                    items: outcome.uploads,
                    t: outcome.t,
                });
            }
            if matches!(frame, Frame::Bye) {
                break 'session "bye".to_string();
            }
        }
    };
    match &pipeline {
        Some(p) => {
            log::info!("edge: session {peer} for patient {} ended: {reason}", p.patient_id());
            let _ = shared.uploads.send(UploaderMsg::Flush(p.patient_id().to_string()));
        }
        None => {
            log::warn!("edge: session {peer} rejected: {reason}");
            shared.stat(|s| s.sessions_rejected += 1);
        }
    }
    let _ = stream.shutdown().await;
}

async fn post_with_retry<T: Serialize>(
    client: &reqwest::Client,
    url: &str,
    body: &T,
    attempts: u32,
    first_backoff: Duration,
) -> Result<reqwest::Response, String> {
    let mut backoff = first_backoff;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            tokio::time::sleep(backoff).await;
            backoff *= 2;
        }
        match client.post(url).json(body).send().await {
            Ok(r) if r.status().is_success() => return Ok(r),
            Ok(r) if r.status().is_client_error() => return Err(format!("rejected with {}", r.status())),
            Ok(r) => last = format!("status {}", r.status()),
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

async fn dispatch_alerts(
    mut rx: mpsc::UnboundedReceiver<Alert>,
    client: reqwest::Client,
    cloud: Option<String>,
    shared: Arc<Shared>,
) {
    while let Some(alert) = rx.recv().await {
        let Some(base) = cloud.clone() else {
            log::warn!("edge: no cloud configured; alert {} not delivered", alert.alert_id);
            continue;
        };
        let client = client.clone();
        let shared = shared.clone();
        tokio::spawn(async move {
            let url = format!("{base}/alerts");
            match post_with_retry(&client, &url, &alert, 5, Duration::from_millis(50)).await {
                Ok(_) => shared.stat(|s| s.alerts_dispatched += 1),
                Err(e) => {
                    log::error!("edge: alert {} undelivered: {e}", alert.alert_id);
                    shared.stat(|s| s.alerts_failed += 1);
                }
            }
        });
    }
}

struct Uploader {
    client: reqwest::Client,
    cloud: Option<String>,
    assembler: BatchAssembler,
    retained: HashMap<String, UploadBatch>,
    shared: Arc<Shared>,
}

impl Uploader {
    async fn deliver(&mut self, batch: UploadBatch) {
        let patient = batch.patient_id.clone();
        let batch = match self.retained.remove(&patient) {
            Some(old) => old.merge(batch),
            None => batch,
        };
        let Some(base) = &self.cloud else {
            log::warn!("edge: no cloud configured; batch {} dropped", batch.batch_id);
            return;
        };
        let url = format!("{base}/ingest/batch");
        match post_with_retry(&self.client, &url, &batch, 5, Duration::from_millis(100)).await {
            Ok(_) => {
                let n = batch.len() as u64;
                self.shared.stat(|s| {
                    s.batches_uploaded += 1;
                    s.records_uploaded += n;
                });
                log::debug!("edge: uploaded {}", batch.batch_id);
            }
            Err(e) => {
                log::warn!("edge: upload of {} failed ({e}); retained", batch.batch_id);
                self.shared.stat(|s| s.batches_retained += 1);
                self.retained.insert(patient, batch);
            }
        }
    }

    async fn deliver_all(&mut self, batches: Vec<UploadBatch>) {
        for b in batches {
            self.deliver(b).await;
        }
    }
}

async fn run_uploader(
    mut rx: mpsc::UnboundedReceiver<UploaderMsg>,
    client: reqwest::Client,
    cloud: Option<String>,
    period_ms: i64,
    shared: Arc<Shared>,
) {
    let mut up = Uploader {
        client,
        cloud,
        assembler: BatchAssembler::new(period_ms),
        retained: HashMap::new(),
        shared,
    };
    while let Some(msg) = rx.recv().await {
        match msg {
            UploaderMsg::Items { patient_id, items, t } => {
                let mut closed = Vec::new();
                for item in items {
                    closed.extend(up.assembler.push(&patient_id, item));
                }
                if let Some(t) = t {
                    closed.extend(up.assembler.advance(&patient_id, t));
                }
                up.deliver_all(closed).await;
            }
            UploaderMsg::Flush(patient_id) => {
                let batch = up.assembler.flush(&patient_id);
                up.deliver_all(batch.into_iter().collect()).await;
            }
            UploaderMsg::FlushAll(done) => {
                let mut batches = up.assembler.flush_all();
                // Retry retained batches even when nothing new closed.
                let waiting: Vec<String> = up.retained.keys().filter(|p| !batches.iter().any(|b| &b.patient_id == *p)).cloned().collect();
                for p in waiting {
                    if let Some(b) = up.retained.remove(&p) {
                        batches.push(b);
                    }
                }
                up.deliver_all(batches).await;
                let _ = done.send(());
            }
        }
    }
}

async fn serve_instant(listener: TcpListener, shared: Arc<Shared>) {
    let app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/patients", get(list_patients))
        .route("/patients/{id}/instant", get(get_instant))
        .route("/stats", get(get_stats))
        .with_state(shared);
    if let Err(e) = axum::serve(listener, app).await {
        log::error!("edge: instant server stopped: {e}");
    }
}

async fn list_patients(State(shared): State<Arc<Shared>>) -> Json<Vec<String>> {
    Json(shared.cache.patients())
}

async fn get_instant(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    match shared.cache.instant(&id, now_ms()) {
        Ok(data) => Json(data).into_response(),
        Err(e) => error_body(StatusCode::NOT_FOUND, "UnknownPatient", &e.to_string()),
    }
}

async fn get_stats(State(shared): State<Arc<Shared>>) -> Json<EdgeStats> {
    Json(shared.stats.lock().unwrap_or_else(|e| e.into_inner()).clone())
}
