//! The `teleop` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 an
//! acceptance threshold was not met.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use teleop_core::features::featurize;
use teleop_core::gbdt::{evaluate, load_model, save_model, stratified_split, train_with_history, TrainConfig, N_CLASSES};
use teleop_core::gesture::{FsmConfig, GestureClass};
use teleop_core::landmark::{decode_labeled_record, decode_trace, encode_labeled_record, LabeledSample};
use teleop_core::pipeline::{
    decode_commands, encode_commands, replay, simulate_commands, simulate_trace, Classifier, Pipeline, PipelineConfig,
};
use teleop_core::scene::{Cell, CellConfig, Scene};
use teleop_core::session::Policy;
use teleop_core::synth::generate_dataset;
use teleop_server::{serve, ServerConfig, SessionSettings};
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_THRESHOLD: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Data(_) => EXIT_DATA,
            CliError::Threshold(_) => EXIT_THRESHOLD,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Gesture-driven robot teleoperation toolkit")]
pub struct Cli {
    /// File of `key = value` lines supplying flags; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled landmark dataset
    GenDataset(GenDatasetArgs),
    /// Train the gesture classifier
    Train(TrainArgs),
    /// Evaluate a model on a labeled dataset
    Eval(EvalArgs),
    /// Turn a landmark trace into the robot command stream
    Replay(ReplayArgs),
    /// Run the simulated cell on commands or a trace and write a state log
    Simulate(SimulateArgs),
    /// Serve the pipeline over WebSocket and length-prefixed TCP
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Samples per class, in the order Move,Angle,Grab,NoGesture
    #[arg(long, default_value = "200,200,200,400")]
    pub counts: String,
    /// Generator seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Landmark noise scale
    #[arg(long, default_value_t = 0.08)]
    pub noise: f64,
    /// Output JSONL file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Fraction of every class held out for evaluation (0 uses everything)
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Seed of the stratified split
    #[arg(long, default_value_t = 42)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled dataset (JSONL)
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file
    #[arg(long)]
    pub out_model: PathBuf,
    /// Boosting rounds (one tree per class each)
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
    /// Recorded in the run; training is deterministic
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset (JSONL)
    #[arg(long)]
    pub data: PathBuf,
    /// Trained classifier
    #[arg(long)]
    pub model: PathBuf,
    /// Exit with status 3 when accuracy is below this
    #[arg(long, default_value_t = 0.0)]
    pub min_accuracy: f64,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Floor control policy: exclusive_token or last_writer
    #[arg(long, default_value = "exclusive_token")]
    pub policy: Policy,
    /// Idle time after which the token holder loses control
    #[arg(long, default_value_t = 5000)]
    pub idle_timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Landmark trace (JSONL)
    #[arg(long)]
    pub trace: PathBuf,
    /// Trained classifier
    #[arg(long)]
    pub model: PathBuf,
    /// Output command stream (JSONL)
    #[arg(long)]
    pub out_commands: PathBuf,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false, args = ["commands", "trace"])]
pub struct SimulateArgs {
    /// Command stream written by replay
    #[arg(long)]
    pub commands: Option<PathBuf>,
    /// Landmark trace, run through the full pipeline (needs --model)
    #[arg(long, requires = "model")]
    pub trace: Option<PathBuf>,
    /// Trained classifier, used with --trace
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Scene file with the objects on the bench
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output state log (JSONL)
    #[arg(long)]
    pub out_log: PathBuf,
    /// Simulated time after the last input
    #[arg(long, default_value_t = 2000)]
    pub settle_ms: u64,
    /// Interval between state lines
    #[arg(long, default_value_t = 100)]
    pub log_every_ms: u64,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Trained classifier
    #[arg(long)]
    pub model: PathBuf,
    /// Scene file with the objects on the bench
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// WebSocket listen address
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub ws: SocketAddr,
    /// Length-prefixed TCP listen address
    #[arg(long, default_value = "127.0.0.1:8766")]
    pub tcp: SocketAddr,
    #[command(flatten)]
    pub session: SessionArgs,
    /// Simulation tick
    #[arg(long, default_value_t = 10)]
    pub tick_ms: u64,
    /// Robot state broadcasts per second
    #[arg(long, default_value_t = 30)]
    pub robot_state_hz: u64,
    /// Tactile frames on the wire
    #[arg(long, default_value_t = 30)]
    pub tactile_hz: u64,
    /// Send every tactile frame (120 Hz), overriding --tactile-hz
    #[arg(long)]
    pub tactile_full_rate: bool,
    /// Per-client queue length before telemetry is dropped
    #[arg(long, default_value_t = 256)]
    pub outbox_capacity: usize,
    /// Stop after this long; 0 runs until interrupted
    #[arg(long, default_value_t = 0)]
    pub duration_ms: u64,
}

/// The clap command with every subcommand letting a later flag replace an
/// earlier one, which is how command-line flags beat config entries.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

/// Parses, runs and reports; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(args) {
        Ok(cli) => cli,
        Err(Parsed::Display(text)) => {
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
        Err(Parsed::Error(e)) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

enum Parsed {
    /// Help or version text.
    Display(String),
    Error(CliError),
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn parse_with_config(mut args: Vec<OsString>) -> Result<Cli, Parsed> {
    let cmd = command();
    if let Some(path) = config_path(&args) {
        let text = std::fs::read_to_string(&path).map_err(|source| Parsed::Error(CliError::Io { path, source }))?;
        let entries = config::parse(&text).map_err(Parsed::Error)?;
        let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
        if let Some(pos) = args.iter().position(|a| names.iter().any(|n| a.to_str() == Some(n))) {
            let sub = args[pos].to_string_lossy().into_owned();
            let extra = config::to_args(&entries, &cmd, &sub).map_err(Parsed::Error)?;
            args.splice(pos + 1..pos + 1, extra);
        }
    }
    let matches = cmd.try_get_matches_from(args).map_err(clap_error)?;
    Cli::from_arg_matches(&matches).map_err(clap_error)
}

fn clap_error(e: clap::Error) -> Parsed {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Parsed::Display(e.render().to_string()),
        _ => Parsed::Error(CliError::Usage(e.render().to_string().trim_end().trim_start_matches("error: ").to_string())),
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenDataset(a) => gen_dataset(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Replay(a) => replay_cmd(&a, out),
        Command::Simulate(a) => simulate_cmd(&a, out),
        Command::Serve(a) => serve_cmd(&a, out),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn report(out: &mut dyn Write, text: std::fmt::Arguments<'_>) {
    let _ = out.write_fmt(text);
}

pub fn parse_counts(s: &str) -> Result<BTreeMap<GestureClass, usize>, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != GestureClass::TRAINABLE.len() {
        return Err(CliError::Usage(format!("--counts needs 4 comma-separated numbers, got {s:?}")));
    }
    let mut counts = BTreeMap::new();
    for (class, p) in GestureClass::TRAINABLE.iter().zip(parts) {
        let n = p.parse().map_err(|_| CliError::Usage(format!("--counts: {p:?} is not a count")))?;
        counts.insert(*class, n);
    }
    Ok(counts)
}

fn gen_dataset(a: &GenDatasetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let counts = parse_counts(&a.counts)?;
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(CliError::Usage(format!("--noise must be a non-negative number, got {}", a.noise)));
    }
    let samples = generate_dataset(&counts, a.seed, a.noise);
    let mut text = String::new();
    for s in &samples {
        text.push_str(&encode_labeled_record(s));
        text.push('\n');
    }
    write_file(&a.out, text.as_bytes())?;
    for class in GestureClass::TRAINABLE {
        report(out, format_args!("{:<11} {}\n", class.name(), counts[&class]));
    }
    report(out, format_args!("wrote {} samples to {}\n", samples.len(), a.out.display()));
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSample>, CliError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            decode_labeled_record(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

type Rows = Vec<(Vec<f64>, GestureClass)>;

/// Featurizes the dataset and returns the (train, held-out) rows.
fn split_rows(samples: &[LabeledSample], split: &SplitArgs) -> Result<(Rows, Rows), CliError> {
    if !(0.0..1.0).contains(&split.holdout) {
        return Err(CliError::Usage(format!("--holdout must be in [0, 1), got {}", split.holdout)));
    }
    let rows = featurize(samples).map_err(|(i, e)| CliError::Data(format!("sample {}: {e}", i + 1)))?;
    if split.holdout == 0.0 {
        return Ok((rows.clone(), rows));
    }
    let labels: Vec<_> = rows.iter().map(|r| r.1).collect();
    let (tr, te) = stratified_split(&labels, split.holdout, split.split_seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    Ok((pick(&tr), pick(&te)))
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let samples = read_dataset(&a.data)?;
    let (train_rows, _) = split_rows(&samples, &a.split)?;
    let config = TrainConfig {
        rounds: a.rounds,
        learning_rate: a.learning_rate,
        max_depth: a.max_depth,
        min_samples_leaf: a.min_samples_leaf,
        seed: a.seed,
    };
    let outcome = train_with_history(&train_rows, &config).map_err(|e| match e {
        teleop_core::gbdt::GbdtError::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    })?;
    write_file(&a.out_model, &save_model(&outcome.model))?;
    report(out, format_args!("trained on {} samples, {} rounds\n", train_rows.len(), outcome.model.rounds()));
    report(out, format_args!("final train loss {:.6e}\n", outcome.final_loss()));
    Ok(())
}

fn load_classifier(path: &Path) -> Result<Classifier, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let model = load_model(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Classifier::new(model).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let classifier = load_classifier(&a.model)?;
    let samples = read_dataset(&a.data)?;
    let (_, test) = split_rows(&samples, &a.split)?;
    let eval = evaluate(classifier.model(), &test).map_err(|e| CliError::Data(e.to_string()))?;
    report(out, format_args!("accuracy {:.4} ({} samples)\n", eval.accuracy, eval.total()));
    report(out, format_args!("{:<11}", "true\\pred"));
    for c in GestureClass::TRAINABLE {
        report(out, format_args!(" {:>9}", c.name()));
    }
    report(out, format_args!("\n"));
    for (k, row) in eval.confusion.iter().enumerate().take(N_CLASSES) {
        report(out, format_args!("{:<11}", GestureClass::TRAINABLE[k].name()));
        for n in row {
            report(out, format_args!(" {n:>9}"));
        }
        report(out, format_args!("\n"));
    }
    if eval.accuracy < a.min_accuracy {
        return Err(CliError::Threshold(format!("accuracy {:.4} below --min-accuracy {}", eval.accuracy, a.min_accuracy)));
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<teleop_core::landmark::HandFrame>, CliError> {
    decode_trace(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_scene(path: Option<&Path>) -> Result<Scene, CliError> {
    match path {
        None => Ok(Scene::default()),
        Some(p) => Scene::parse(&read_text(p)?, FsmConfig::default().grip_max)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
    }
}

fn pipeline_config(s: &SessionArgs) -> PipelineConfig {
    PipelineConfig { policy: s.policy, idle_timeout_ms: s.idle_timeout_ms, ..PipelineConfig::default() }
}

fn replay_cmd(a: &ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let classifier = load_classifier(&a.model)?;
    let frames = read_trace(&a.trace)?;
    let mut pipeline = Pipeline::new(classifier, pipeline_config(&a.session), Scene::default());
    let records = replay(&mut pipeline, &frames).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&a.out_commands, encode_commands(&records).as_bytes())?;
    report(out, format_args!("{} frames -> {} commands\n", frames.len(), records.len()));
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scene = read_scene(a.scene.as_deref())?;
    let (_, log) = if let Some(path) = &a.commands {
        let records = decode_commands(&read_text(path)?)
            .map_err(|(line, e)| CliError::Data(format!("{}:{line}: {e}", path.display())))?;
        simulate_commands(Cell::new(CellConfig::default(), scene), &records, a.settle_ms, a.log_every_ms)
    } else {
        let trace = a.trace.as_deref().expect("clap requires --commands or --trace");
        let model = a.model.as_deref().expect("clap requires --model with --trace");
        let pipeline = Pipeline::new(load_classifier(model)?, pipeline_config(&a.session), scene);
        simulate_trace(pipeline, &read_trace(trace)?, a.settle_ms, a.log_every_ms)
            .map_err(|e| CliError::Data(e.to_string()))?
    };
    write_file(&a.out_log, log.to_jsonl().as_bytes())?;
    if let Some(f) = log.final_line() {
        report(out, format_args!("t = {} ms, gripper {:.4} m\n", f.t, f.gripper));
        for g in &f.grasped {
            report(out, format_args!("grasped {g}\n"));
        }
        for r in &f.released {
            let over = r.over.as_deref().unwrap_or("nothing");
            report(out, format_args!("released {} at {} ms over {over}\n", r.object, r.t));
        }
    }
    Ok(())
}

fn serve_cmd(a: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let classifier = load_classifier(&a.model)?;
    let scene = read_scene(a.scene.as_deref())?;
    for (name, hz) in [("--robot-state-hz", a.robot_state_hz), ("--tactile-hz", a.tactile_hz), ("--tick-ms", a.tick_ms)] {
        if hz == 0 {
            return Err(CliError::Usage(format!("{name} must be positive")));
        }
    }
    let mut config = ServerConfig::new(classifier, scene);
    config.ws_addr = Some(a.ws);
    config.tcp_addr = Some(a.tcp);
    config.tick_ms = a.tick_ms;
    config.outbox_capacity = a.outbox_capacity;
    config.settings = SessionSettings {
        policy: a.session.policy,
        idle_timeout_ms: a.session.idle_timeout_ms,
        robot_state_hz: a.robot_state_hz,
        tactile_hz: if a.tactile_full_rate { 120 } else { a.tactile_hz },
        ..SessionSettings::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let server = serve(config).await.map_err(|e| CliError::Data(e.to_string()))?;
        if let Some(ws) = server.ws_addr() {
            report(out, format_args!("websocket on ws://{ws}\n"));
        }
        if let Some(tcp) = server.tcp_addr() {
            report(out, format_args!("tcp on {tcp}\n"));
        }
        let _ = out.flush();
        if a.duration_ms > 0 {
            tokio::time::sleep(Duration::from_millis(a.duration_ms)).await;
        } else {
            let _ = tokio::signal::ctrl_c().await;
        }
        server.shutdown().await;
        Ok(())
    })
}
