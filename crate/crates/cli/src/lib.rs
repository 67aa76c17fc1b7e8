//! `remoni` command-line interface.

pub mod golden;

use std::ffi::OsString;
use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use remoni_core::domain::VitalRanges;
use remoni_core::fall::neural::ModelWeights;
use remoni_core::fall::Detector;
use remoni_core::nlp::metrics::{evaluate_recognition, Labeled};
use remoni_core::nlp::prompt::Prompts;
use remoni_core::nlp::{ComposerBackend, Engine, IntentBackend, RecognizerBackend, Registry};
use remoni_core::protocol::encode;
use remoni_core::replay::{corpus_rows, replay, write_replay_csv};
use remoni_core::signal::read_replay_csv;
use remoni_core::sim::{frame_plan, labeled_corpus, seeded_day, Scenario};
use remoni_core::vitals::GuardConfig;
use remoni_runtime::bench::{self, BenchOptions};
use remoni_runtime::clients::HttpChatModel;
use remoni_runtime::cloud::{self, CloudConfig};
use remoni_runtime::edge::{self, EdgeConfig};
use remoni_runtime::emitter::{anchored, emit, EmitError};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "remoni", version, about = "Remote health monitoring: simulator, edge node, cloud service and tools")]
pub struct Cli {
    /// Emit reports as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wearable simulator.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Edge node.
    #[command(subcommand)]
    Edge(EdgeCommand),
    /// Cloud service.
    #[command(subcommand)]
    Cloud(CloudCommand),
    /// Feed a recorded accelerometer CSV through preprocessing and a detector.
    Replay(ReplayArgs),
    /// Offline evaluation of the assistant's components.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Stream a scenario to an edge node (or write its byte stream to a file).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Edge ingest address.
        #[arg(long, default_value = "127.0.0.1:7400")]
        edge: String,
        /// Override the scenario's speedup.
        #[arg(long)]
        speedup: Option<f64>,
        /// Write the encoded frames here instead of connecting.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a labeled replay CSV of scripted falls and daily activities.
    Corpus {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        falls: usize,
        #[arg(long, default_value_t = 400)]
        adl: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One minute of seeded history at 09:00 UTC, printed or posted to a cloud.
    Day {
        #[arg(long)]
        patient: String,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Cloud base URL to post the batch to.
        #[arg(long)]
        cloud: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EdgeCommand {
    Run(EdgeRunArgs),
}

#[derive(Debug, Args)]
pub struct EdgeRunArgs {
    /// Ingest listen address.
    #[arg(long, default_value = "127.0.0.1:7400")]
    pub listen: String,
    /// Instant-data HTTP listen address.
    #[arg(long, default_value = "127.0.0.1:7401")]
    pub instant_listen: String,
    /// Cloud base URL; `REMONI_CLOUD_URL` when unset.
    #[arg(long)]
    pub cloud: Option<String>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = remoni_core::edge::DEFAULT_UPLOAD_PERIOD_S)]
    pub upload_period_s: u64,
    /// Healthy ranges JSON overriding the defaults.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct DetectorArgs {
    /// Neural detector weights JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rule baseline (the default).
    #[arg(long)]
    pub rule: bool,
}

impl DetectorArgs {
    fn detector(&self) -> Result<Detector, CliError> {
        match &self.model {
            Some(p) => Ok(Detector::model(
                ModelWeights::load(p).map_err(|e| CliError::Runtime(e.to_string()))?,
            )),
            None => Ok(Detector::default()),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum CloudCommand {
    Run(CloudRunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntentChoice {
    Grammar,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecognizerChoice {
    Stub,
    Mllm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ComposerChoice {
    Template,
    Llm,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Patient registry JSON; defaults to `<data-dir>/patients.json`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Directory with prompt overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = IntentChoice::Grammar)]
    pub intent: IntentChoice,
    #[arg(long, value_enum, default_value_t = RecognizerChoice::Stub)]
    pub recognizer: RecognizerChoice,
    #[arg(long, value_enum, default_value_t = ComposerChoice::Template)]
    pub composer: ComposerChoice,
}

#[derive(Debug, Args)]
pub struct CloudRunArgs {
    /// Listen address; `:8080` binds all interfaces.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long, default_value = "./data")]
    pub data_dir: PathBuf,
    /// Edge instant-data base URL.
    #[arg(long)]
    pub edge: Option<String>,
    /// Directory of static UI assets.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = remoni_core::signal::WINDOW_STRIDE)]
    pub stride: usize,
    /// Print every window's score.
    #[arg(long)]
    pub windows: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Exact-match intent detection over a golden case file.
    Nlu {
        #[arg(long)]
        cases: PathBuf,
        /// Use the language model configured by `REMONI_LLM_URL`.
        #[arg(long)]
        llm: bool,
    },
    /// Accuracy and macro metrics of recognition predictions.
    Recognizer {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Alert and chat latency against local edge and cloud processes.
    Latency {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Chat repetitions per question type (default: n).
        #[arg(long)]
        chat_reps: Option<usize>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Show child process logs.
        #[arg(long)]
        verbose: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::from_json(&read(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Accepts `host:port` or `:port` (all interfaces).
pub fn parse_listen(s: &str) -> Result<SocketAddr, CliError> {
    let full = if s.starts_with(':') { format!("0.0.0.0{s}") } else { s.to_string() };
    full.to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| CliError::Usage(format!("bad listen address '{s}'")))
}

fn print_report<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
    } else {
        print!("{}", text());
    }
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)
}

pub fn load_registry(path: Option<&Path>, data_dir: Option<&Path>) -> Result<Registry, CliError> {
    let path = match (path, data_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) if d.join("patients.json").exists() => d.join("patients.json"),
        _ => return Ok(Registry::default()),
    };
    serde_json::from_str(&read(&path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn model_from_env(prefix: &str, handle: &tokio::runtime::Handle) -> Result<Arc<HttpChatModel>, CliError> {
    HttpChatModel::from_env(prefix, handle.clone())
        .map(Arc::new)
        .ok_or_else(|| CliError::Usage(format!("{prefix}_URL is not set")))
}

fn build_engine(args: &EngineArgs, data_dir: Option<&Path>, handle: &tokio::runtime::Handle) -> Result<Engine, CliError> {
    let registry = load_registry(args.registry.as_deref(), data_dir)?;
    let intent = match args.intent {
        IntentChoice::Grammar => IntentBackend::Grammar,
        IntentChoice::Llm => IntentBackend::Llm(model_from_env("REMONI_LLM", handle)?),
    };
    let recognizer = match args.recognizer {
        RecognizerChoice::Stub => RecognizerBackend::Stub,
        RecognizerChoice::Mllm => RecognizerBackend::Mllm {
            model: model_from_env("REMONI_MLLM", handle)?,
            fallback_to_stub: false,
        },
    };
    let composer = match args.composer {
        ComposerChoice::Template => ComposerBackend::Template,
        ComposerChoice::Llm => ComposerBackend::Llm(model_from_env("REMONI_LLM", handle)?),
    };
    let prompts = match &args.prompts {
        Some(d) => Prompts::load_dir(d).map_err(runtime)?,
        None => Prompts::default(),
    };
    Ok(Engine::new(registry, intent, recognizer, composer).with_prompts(prompts))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let default_level = match cli.command {
        Command::Edge(_) | Command::Cloud(_) => "info",
        _ => "warn",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::Sim(c) => sim(c, json),
        Command::Edge(EdgeCommand::Run(a)) => edge_run(a),
        Command::Cloud(CloudCommand::Run(a)) => cloud_run(a),
        Command::Replay(a) => replay_cmd(a, json),
        Command::Eval(c) => eval(c, json),
        Command::Bench(BenchCommand::Latency {
            scenario,
            n,
            chat_reps,
            out,
            verbose,
        }) => {
            let s = load_scenario(&scenario)?;
            let id = scenario.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let exe = std::env::current_exe().map_err(runtime)?;
            let mut opts = BenchOptions::new(exe, s, &id, n);
            opts.chat_reps = chat_reps.unwrap_or(n);
            opts.verbose = verbose;
            let report = tokio_runtime()?.block_on(bench::run(&opts)).map_err(runtime)?;
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                fs::write(&out, text).map_err(runtime)?;
            }
            print_report(json, &report, || report.render_table());
            if report.alerts.len() != report.expected_alerts {
                return Err(CliError::Runtime(format!(
                    "{} alerts delivered, {} expected",
                    report.alerts.len(),
                    report.expected_alerts
                )));
            }
            Ok(())
        }
    }
}

fn sim(c: SimCommand, json: bool) -> Result<(), CliError> {
    match c {
        SimCommand::Run {
            scenario,
            edge,
            speedup,
            out,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(x) = speedup {
                s.speedup = x;
            }
            s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(out) = out {
                // Files are written without pacing; an unset start becomes now.
                let s = anchored(&s);
                let mut bytes = Vec::new();
                for tf in frame_plan(&s) {
                    bytes.extend(encode(&tf.frame).map_err(runtime)?);
                }
                fs::write(&out, &bytes).map_err(runtime)?;
                if !json {
                    println!("wrote {} bytes to {}", bytes.len(), out.display());
                }
                return Ok(());
            }
            let rt = tokio_runtime()?;
            match rt.block_on(emit(&s, &edge)) {
                Ok(summary) => {
                    print_report(json, &summary, || {
                        let kinds: Vec<String> = summary.frames.iter().map(|(k, n)| format!("{k}={n}")).collect();
                        format!(
                            "sent {} frames ({}), {} bytes in {:.0} ms\n",
                            summary.total_frames(),
                            kinds.join(" "),
                            summary.bytes,
                            summary.wall_time_ms
                        )
                    });
                    Ok(())
                }
                Err(EmitError::MidStreamDisconnect { detail, partial }) => {
                    print_report(json, &partial, || format!("partial: {} frames sent\n", partial.total_frames()));
                    Err(CliError::Runtime(format!("disconnected mid-stream: {detail}")))
                }
                Err(e) => Err(runtime(e)),
            }
        }
        SimCommand::Corpus {
            seed,
            falls,
            adl,
            out,
        } => {
            let rows = corpus_rows(&labeled_corpus(seed, falls, adl));
            let file = fs::File::create(&out).map_err(runtime)?;
            write_replay_csv(&rows, std::io::BufWriter::new(file)).map_err(runtime)?;
            if !json {
                println!("wrote {} rows ({falls} falls, {adl} ADL segments) to {}", rows.len(), out.display());
            }
            Ok(())
        }
        SimCommand::Day {
            patient,
            date,
            seed,
            cloud,
        } => {
            let batch = seeded_day(&patient, date, seed);
            match cloud {
                None => {
                    println!("{}", serde_json::to_string(&batch).expect("batch serializes"));
                    Ok(())
                }
                Some(url) => {
                    let url = format!("{}/ingest/batch", remoni_runtime::base_url(&url));
                    let rt = tokio_runtime()?;
                    let body: serde_json::Value = rt.block_on(async {
                        let client = reqwest_client()?;
                        let resp = client.post(&url).json(&batch).send().await.map_err(runtime)?;
                        let status = resp.status();
                        let body: serde_json::Value = resp.json().await.map_err(runtime)?;
                        if status.is_success() {
                            Ok(body)
                        } else {
                            Err(CliError::Runtime(format!("cloud answered {status}: {body}")))
                        }
                    })?;
                    print_report(json, &body, || format!("{body}\n"));
                    Ok(())
                }
            }
        }
    }
}

fn reqwest_client() -> Result<remoni_runtime::Client, CliError> {
    remoni_runtime::Client::builder().no_proxy().build().map_err(runtime)
}

fn edge_run(a: EdgeRunArgs) -> Result<(), CliError> {
    let mut guard = GuardConfig::default();
    if let Some(p) = &a.ranges {
        guard.ranges = VitalRanges::from_json(&read(p)?).map_err(runtime)?;
    }
    let cloud = a.cloud.clone().or_else(|| std::env::var("REMONI_CLOUD_URL").ok()).map(|u| remoni_runtime::base_url(&u));
    if cloud.is_none() {
        log::warn!("no cloud URL given; alerts and uploads will be dropped");
    }
    let config = EdgeConfig {
        listen: parse_listen(&a.listen)?,
        instant_listen: parse_listen(&a.instant_listen)?,
        cloud_url: cloud,
        detector: a.detector.detector()?,
        guard,
        upload_period_ms: (a.upload_period_s.max(1) * 1000) as i64,
    };
    tokio_runtime()?.block_on(async {
        let handle = edge::start(config).await.map_err(runtime)?;
        tokio::signal::ctrl_c().await.map_err(runtime)?;
        log::info!("edge: shutting down");
        handle.shutdown().await;
        Ok(())
    })
}

fn cloud_run(a: CloudRunArgs) -> Result<(), CliError> {
    let listen = parse_listen(&a.listen)?;
    let rt = tokio_runtime()?;
    let engine = build_engine(&a.engine, Some(&a.data_dir), rt.handle())?;
    let config = CloudConfig {
        listen,
        data_dir: a.data_dir.clone(),
        edge_url: a.edge.as_deref().map(remoni_runtime::base_url),
        engine,
        static_dir: a.static_dir.clone(),
    };
    rt.block_on(async {
        let handle = cloud::start(config).await.map_err(runtime)?;
        tokio::signal::ctrl_c().await.map_err(runtime)?;
        log::info!("cloud: shutting down");
        handle.shutdown();
        Ok(())
    })
}

fn replay_cmd(a: ReplayArgs, json: bool) -> Result<(), CliError> {
    if a.stride == 0 {
        return Err(CliError::Usage("stride must be positive".into()));
    }
    let file = fs::File::open(&a.csv).map_err(|e| CliError::Runtime(format!("{}: {e}", a.csv.display())))?;
    let rows = read_replay_csv(std::io::BufReader::new(file)).map_err(runtime)?;
    let detector = a.detector.detector()?;
    let report = replay(&rows, &detector, a.stride).map_err(runtime)?;
    print_report(json, &report, || {
        let mut out = String::new();
        if a.windows || report.confusion.is_none() {
            out.push_str(&format!("{:>16}{:>16}{:>10}{:>8}{:>8}\n", "t_start", "t_end", "score", "fall", "label"));
            for w in &report.windows {
                out.push_str(&format!(
                    "{:>16}{:>16}{:>10.4}{:>8}{:>8}\n",
                    w.t_start,
                    w.t_end,
                    w.score.probability,
                    u8::from(w.score.is_fall),
                    w.label.map_or("-".into(), |l| u8::from(l).to_string())
                ));
            }
        }
        out.push_str(&format!("{} windows\n", report.windows.len()));
        if let Some(c) = report.render_confusion() {
            out.push_str(&c);
        }
        out
    });
    Ok(())
}

fn eval(c: EvalCommand, json: bool) -> Result<(), CliError> {
    match c {
        EvalCommand::Nlu { cases, llm } => {
            let file = golden::GoldenFile::from_json(&read(&cases)?).map_err(runtime)?;
            let report = if llm {
                let rt = tokio_runtime()?;
                let model = model_from_env("REMONI_LLM", rt.handle())?;
                let prompts = Prompts::default();
                // The model calls block on the runtime, so run off its threads.
                std::thread::scope(|s| {
                    s.spawn(|| {
                        file.evaluate(|q, now| {
                            remoni_core::nlp::intent::detect_with_model(model.as_ref(), &prompts.intent, q, now)
                        })
                    })
                    .join()
                    .expect("evaluation thread")
                })
            } else {
                let grammar = file.registry().grammar();
                file.evaluate(|q, now| grammar.detect(q, now))
            };
            print_report(json, &report, || report.render());
            if report.passed != report.total {
                return Err(CliError::Runtime(format!("{} of {} cases failed", report.total - report.passed, report.total)));
            }
            Ok(())
        }
        EvalCommand::Recognizer { pred, labels } => {
            let parse = |p: &Path| -> Result<Vec<Labeled>, CliError> {
                serde_json::from_str(&read(p)?).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
            };
            let metrics = evaluate_recognition(&parse(&pred)?, &parse(&labels)?).map_err(runtime)?;
            print_report(json, &metrics, || {
                let mut out = format!("{:<10}{:>6}{:>10}{:>10}{:>10}{:>10}\n", "task", "n", "accuracy", "macro-P", "macro-R", "macro-F1");
                for (name, m) in [("activity", &metrics.activity), ("emotion", &metrics.emotion)] {
                    out.push_str(&format!(
                        "{name:<10}{:>6}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
                        m.n, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
                    ));
                }
                out
            });
            Ok(())
        }
    }
}
