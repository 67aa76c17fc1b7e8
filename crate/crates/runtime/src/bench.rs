//! Latency benchmark: runs a scenario repeatedly against edge and cloud
//! child processes and times alert delivery and assistant questions.

use std::path::PathBuf;
use std::process::Stdio;
use std::time::{Duration, Instant};

use remoni_core::bench::{AlertSample, BenchReport, ChatTiming, QuestionType, Stats};
use remoni_core::domain::{now_ms, Alert};
use remoni_core::nlp::AssistantResponse;
use remoni_core::sim::{Event, Scenario};
use remoni_core::vitals::GuardConfig;
use futures::StreamExt;
use thiserror::Error;
use tokio::process::{Child, Command};
use tokio::sync::mpsc;

use crate::emitter::{emit, EmitError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("could not start {what}: {detail}")]
    Spawn { what: &'static str, detail: String },
    #[error("{0} did not become healthy")]
    NotHealthy(&'static str),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("http: {0}")]
    Http(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// The `remoni` executable used for the child processes.
    pub exe: PathBuf,
    pub scenario: Scenario,
    pub scenario_id: String,
    pub runs: usize,
    /// Repetitions per chat question type; zero skips chat timing.
    pub chat_reps: usize,
    /// Wait for a run's alerts after its stream ends.
    pub alert_timeout: Duration,
    /// Show child process logs.
    pub verbose: bool,
}

impl BenchOptions {
    pub fn new(exe: PathBuf, scenario: Scenario, scenario_id: &str, runs: usize) -> Self {
        Self {
            exe,
            scenario,
            scenario_id: scenario_id.into(),
            runs,
            chat_reps: runs,
            alert_timeout: Duration::from_secs(5),
            verbose: false,
        }
    }
}

/// Scripted emergencies: falls plus excursions outside the default ranges.
pub fn expected_alerts(s: &Scenario) -> usize {
    let ranges = GuardConfig::default().ranges;
    s.events
        .iter()
        .filter(|e| match e {
            Event::Fall { .. } => true,
            Event::VitalExcursion { sign, value, .. } => !ranges.get(*sign).contains(*value),
            Event::Activity { .. } => false,
        })
        .count()
}

fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

struct Children(Vec<Child>);

impl Drop for Children {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.start_kill();
        }
    }
}

fn spawn(opts: &BenchOptions, what: &'static str, args: &[String]) -> Result<Child, BenchError> {
    let mut cmd = Command::new(&opts.exe);
    cmd.args(args).stdin(Stdio::null()).stdout(Stdio::null()).kill_on_drop(true);
    if !opts.verbose {
        cmd.stderr(Stdio::null());
    }
    cmd.spawn().map_err(|e| BenchError::Spawn {
        what,
        detail: e.to_string(),
    })
}

async fn wait_healthy(client: &reqwest::Client, url: &str, what: &'static str) -> Result<(), BenchError> {
    let deadline = Instant::now() + Duration::from_secs(15);
    while Instant::now() < deadline {
        if let Ok(r) = client.get(url).send().await {
            if r.status().is_success() {
                return Ok(());
            }
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    Err(BenchError::NotHealthy(what))
}

/// Subscribes to an alert event stream and forwards each alert.
pub async fn subscribe_alerts(client: &reqwest::Client, url: &str) -> Result<mpsc::UnboundedReceiver<Alert>, BenchError> {
    let resp = client
        .get(url)
        .header("accept", "text/event-stream")
        .send()
        .await
        .map_err(|e| BenchError::Http(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(BenchError::Http(format!("stream answered {}", resp.status())));
    }
    let (tx, rx) = mpsc::unbounded_channel();
    tokio::spawn(async move {
        let mut body = resp.bytes_stream();
        let mut buf = String::new();
        while let Some(Ok(chunk)) = body.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buf.find("\n\n") {
                let event: String = buf.drain(..end + 2).collect();
                let data: Vec<&str> = event
                    .lines()
                    .filter_map(|l| l.strip_prefix("data:"))
                    .map(|d| d.strip_prefix(' ').unwrap_or(d))
                    .collect();
                if data.is_empty() {
                    continue;
                }
                match serde_json::from_str::<Alert>(&data.join("\n")) {
                    Ok(a) => {
                        if tx.send(a).is_err() {
                            return;
                        }
                    }
                    Err(e) => log::warn!("bench: unreadable event: {e}"),
                }
            }
        }
    });
    Ok(rx)
}

async fn time_chat(
    client: &reqwest::Client,
    cloud: &str,
    patient_id: &str,
    reps: usize,
) -> Result<Vec<ChatTiming>, BenchError> {
    let mut out = Vec::new();
    for qt in QuestionType::ALL {
        let question = qt.question(patient_id);
        let mut samples = Vec::new();
        let mut recognize = Vec::new();
        for _ in 0..reps {
            let t = Instant::now();
            let resp = client
                .post(format!("{cloud}/chat"))
                .json(&serde_json::json!({ "question": question }))
                .send()
                .await
                .map_err(|e| BenchError::Http(e.to_string()))?;
            if !resp.status().is_success() {
                let status = resp.status();
                let body = resp.text().await.unwrap_or_default();
                return Err(BenchError::Http(format!("chat answered {status}: {body}")));
            }
            let answer: AssistantResponse = resp.json().await.map_err(|e| BenchError::Http(e.to_string()))?;
            samples.push(t.elapsed().as_secs_f64() * 1000.0);
            recognize.extend(answer.timings.recognize_ms);
        }
        out.push(ChatTiming {
            question_type: qt,
            question,
            total: Stats::of(&samples),
            samples_ms: samples,
            recognize_mean_ms: Stats::of(&recognize).map(|s| s.mean),
        });
    }
    Ok(out)
}

pub async fn run(opts: &BenchOptions) -> Result<BenchReport, BenchError> {
    let data_dir = tempfile::tempdir()?;
    let (cloud_port, edge_port, instant_port) = (free_port()?, free_port()?, free_port()?);
    let cloud = format!("http://127.0.0.1:{cloud_port}");
    let instant = format!("http://127.0.0.1:{instant_port}");
    let ingest = format!("127.0.0.1:{edge_port}");

    let s = |x: &str| x.to_string();
    let _children = Children(vec![
        spawn(
            opts,
            "cloud",
            &[
                s("cloud"),
                s("run"),
                s("--listen"),
                format!("127.0.0.1:{cloud_port}"),
                s("--data-dir"),
                data_dir.path().display().to_string(),
                s("--edge"),
                instant.clone(),
            ],
        )?,
        spawn(
            opts,
            "edge",
            &[
                s("edge"),
                s("run"),
                s("--listen"),
                ingest.clone(),
                s("--instant-listen"),
                format!("127.0.0.1:{instant_port}"),
                s("--cloud"),
                cloud.clone(),
            ],
        )?,
    ]);
    let client = reqwest::Client::builder()
        .no_proxy()
        .build()
        .map_err(|e| BenchError::Http(e.to_string()))?;
    wait_healthy(&client, &format!("{cloud}/health"), "cloud").await?;
    wait_healthy(&client, &format!("{instant}/health"), "edge").await?;
    let mut alerts_rx = subscribe_alerts(&client, &format!("{cloud}/alerts/stream")).await?;

    let per_run = expected_alerts(&opts.scenario);
    let mut samples = Vec::new();
    for run in 0..opts.runs {
        let mut scenario = opts.scenario.clone();
        scenario.start_ms = None;
        let run_start = now_ms();
        let summary = emit(&scenario, &ingest).await?;
        log::info!("bench: run {run} sent {} frames", summary.total_frames());
        let deadline = tokio::time::Instant::now() + opts.alert_timeout;
        let mut got = 0;
        while got < per_run {
            match tokio::time::timeout_at(deadline, alerts_rx.recv()).await {
                Ok(Some(a)) if a.t_detected >= run_start => {
                    if let Some(sample) = AlertSample::from_alert(run, &a) {
                        samples.push(sample);
                        got += 1;
                    }
                }
                Ok(Some(_)) => {}
                Ok(None) | Err(_) => break,
            }
        }
        // Catch stragglers beyond the expected count.
        while let Ok(Some(a)) = tokio::time::timeout(Duration::from_millis(200), alerts_rx.recv()).await {
            if let Some(sample) = AlertSample::from_alert(run, &a) {
                samples.push(sample);
            }
        }
        if got < per_run {
            log::warn!("bench: run {run} delivered {got} of {per_run} alerts");
        }
    }
    let chat = if opts.chat_reps > 0 {
        time_chat(&client, &cloud, &opts.scenario.patient_id, opts.chat_reps).await?
    } else {
        Vec::new()
    };
    Ok(BenchReport::new(
        &opts.scenario_id,
        opts.runs,
        per_run * opts.runs,
        samples,
        chat,
    ))
}
