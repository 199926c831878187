use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use uavbench::bench::{self, BenchError, DetectRunConfig, PluginSpec, TrackRunConfig};
use uavbench::dataset::{self, DatasetError, Split};
use uavbench::fusion::{FusionConfig, FusionError};
use uavbench::metrics::{self, MetricsError};
use uavbench::plugins::ncc::GrayImage;
use uavbench::plugins::protocol::{self, ServeError};
use uavbench::plugins::reference::EmptyDetector;
use uavbench::plugins::{
    Detector, EchoTracker, NccTracker, NccTrackerConfig, PluginError, TemplateDetector, TemplateDetectorConfig, Tracker,
};
use uavbench::synth;

#[derive(Parser)]
#[command(name = "uavbench", version, about = "Anti-UAV tracking and detection benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tracker, optionally fused with a detector, over a tracking split.
    EvalTrack(TrackArgs),
    /// Run a detector over a detection split and report AP/mAP.
    EvalDetect(DetectArgs),
    /// Attribute statistics, histograms and center scatter for a split.
    Stats(StatsArgs),
    /// Replay recorded plug-in outputs over a (tau_t, tau_d) grid.
    Sweep(SweepArgs),
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Expose a reference plug-in over the line protocol on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; its values override flags and environment.
    #[arg(long, env = "UAVBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long, env = "UAVBENCH_DATASET")]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "UAVBENCH_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "UAVBENCH_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "UAVBENCH_SPLIT")]
    split: Option<String>,
    #[arg(long, env = "UAVBENCH_TRACKER")]
    tracker: Option<String>,
    /// Detector spec, or `none` for the tracker-only baseline.
    #[arg(long, env = "UAVBENCH_DETECTOR")]
    detector: Option<String>,
    #[arg(long, env = "UAVBENCH_TAU_T")]
    tau_t: Option<f64>,
    #[arg(long, env = "UAVBENCH_TAU_D")]
    tau_d: Option<f64>,
    /// Re-initialize the tracker on detector-sourced boxes.
    #[arg(long, env = "UAVBENCH_STATE_FEEDBACK")]
    state_feedback: Option<bool>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "UAVBENCH_SPLIT")]
    split: Option<String>,
    #[arg(long, env = "UAVBENCH_DETECTOR")]
    detector: Option<String>,
    /// Comma-separated IoU thresholds (default 0.50:0.05:0.95).
    #[arg(long, env = "UAVBENCH_MAP_THRESHOLDS", value_delimiter = ',')]
    map_thresholds: Option<Vec<f64>>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "UAVBENCH_SPLIT")]
    split: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "UAVBENCH_SPLIT")]
    split: Option<String>,
    #[arg(long, env = "UAVBENCH_TRACKER")]
    tracker: Option<String>,
    #[arg(long, env = "UAVBENCH_DETECTOR")]
    detector: Option<String>,
    /// Comma-separated tau_t values.
    #[arg(long, env = "UAVBENCH_TAU_T", value_delimiter = ',')]
    tau_t: Option<Vec<f64>>,
    /// Comma-separated tau_d values.
    #[arg(long, env = "UAVBENCH_TAU_D", value_delimiter = ',')]
    tau_d: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// tracking, detection or drift.
    #[arg(long, default_value = "tracking")]
    kind: String,
    #[arg(long, env = "UAVBENCH_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    /// Detection split to write.
    #[arg(long, env = "UAVBENCH_SPLIT")]
    split: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    /// `echo` or `ncc`.
    #[arg(long)]
    tracker: Option<String>,
    /// `empty` or `template:<png>`.
    #[arg(long)]
    detector: Option<String>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    split: Option<String>,
    tracker: Option<String>,
    detector: Option<String>,
    tau_t: Option<f64>,
    tau_d: Option<f64>,
    state_feedback: Option<bool>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    seed: Option<u64>,
    map_thresholds: Option<Vec<f64>>,
    sweep_tau_t: Option<Vec<f64>>,
    sweep_tau_d: Option<Vec<f64>>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| ConfigError(format!("--{name} is required")).into())
}

fn spec(s: &str) -> Result<PluginSpec> {
    Ok(s.parse::<PluginSpec>()?)
}

fn split(s: &str) -> Result<Split> {
    Ok(s.parse::<Split>()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EvalTrack(a) => eval_track(a),
        Command::EvalDetect(a) => eval_detect(a),
        Command::Stats(a) => stats(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn eval_track(a: TrackArgs) -> Result<()> {
    let f = load_config(a.common.config.as_deref())?;
    let root = required(f.dataset.or(a.common.dataset), "dataset")?;
    let out = required(f.out.or(a.common.out), "out")?;
    let split = split(&f.split.or(a.split).unwrap_or_else(|| "tracking".into()))?;
    if split != Split::Tracking {
        bail!(ConfigError(format!("eval-track needs the tracking split, got {split}")));
    }
    let defaults = FusionConfig::default();
    let cfg = TrackRunConfig {
        tracker: spec(&f.tracker.or(a.tracker).unwrap_or_else(|| "ncc".into()))?,
        detector: spec(&f.detector.or(a.detector).unwrap_or_else(|| "none".into()))?,
        fusion: FusionConfig {
            tau_t: f.tau_t.or(a.tau_t).unwrap_or(defaults.tau_t),
            tau_d: f.tau_d.or(a.tau_d).unwrap_or(defaults.tau_d),
            state_feedback: f.state_feedback.or(a.state_feedback).unwrap_or(false),
        },
        workers: f.workers.or(a.common.workers).unwrap_or(0),
    };
    let index = dataset::load_dataset(&root, split)?;
    log::info!("{} sequences, tracker {}, detector {}", index.sequences().len(), cfg.tracker, cfg.detector);
    let run = bench::run_tracking(index.sequences(), &cfg)?;
    run.write(&out)?;
    let s = &run.overall.summary;
    println!(
        "success_auc={} norm_precision_auc={} precision_at_20={} out={}",
        s.success_auc,
        s.norm_precision_auc,
        s.precision_at_20,
        out.display()
    );
    Ok(())
}

fn eval_detect(a: DetectArgs) -> Result<()> {
    let f = load_config(a.common.config.as_deref())?;
    let root = required(f.dataset.or(a.common.dataset), "dataset")?;
    let out = required(f.out.or(a.common.out), "out")?;
    let split = split(&f.split.or(a.split).unwrap_or_else(|| "detection-test".into()))?;
    if !split.is_detection() {
        bail!(ConfigError(format!("eval-detect needs a detection split, got {split}")));
    }
    let cfg = DetectRunConfig {
        detector: spec(&required(f.detector.or(a.detector), "detector")?)?,
        iou_thresholds: f.map_thresholds.or(a.map_thresholds).unwrap_or_else(metrics::default_map_thresholds),
        workers: f.workers.or(a.common.workers).unwrap_or(0),
    };
    let index = dataset::load_dataset(&root, split)?;
    let run = bench::run_detection(index.images(), &cfg)?;
    run.write(&out, split)?;
    println!("mAP={} out={}", run.evaluation.summary.map_score, out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let f = load_config(a.common.config.as_deref())?;
    let root = required(f.dataset.or(a.common.dataset), "dataset")?;
    let out = required(f.out.or(a.common.out), "out")?;
    let split = split(&required(f.split.or(a.split), "split")?)?;
    let index = dataset::load_dataset(&root, split)?;
    let report = dataset::attribute_report(&index)?;
    report.write_dir(&out)?;
    let all = &report.all;
    println!(
        "objects={} area_ratio(max,avg,min)=({},{},{}) aspect_ratio(max,avg,min)=({},{},{}) out={}",
        all.object_count,
        all.area_ratio.max,
        all.area_ratio.avg,
        all.area_ratio.min,
        all.aspect_ratio.max,
        all.aspect_ratio.avg,
        all.aspect_ratio.min,
        out.display()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let f = load_config(a.common.config.as_deref())?;
    let root = required(f.dataset.or(a.common.dataset), "dataset")?;
    let out = required(f.out.or(a.common.out), "out")?;
    let split = split(&f.split.or(a.split).unwrap_or_else(|| "tracking".into()))?;
    let tracker = spec(&f.tracker.or(a.tracker).unwrap_or_else(|| "ncc".into()))?;
    let detector = spec(&required(f.detector.or(a.detector), "detector")?)?;
    let taus_t = f.sweep_tau_t.or(a.tau_t).unwrap_or_else(|| vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.99]);
    let taus_d = f.sweep_tau_d.or(a.tau_d).unwrap_or_else(|| vec![0.9]);
    let grid: Vec<(f64, f64)> = taus_t.iter().flat_map(|&t| taus_d.iter().map(move |&d| (t, d))).collect();
    let index = dataset::load_dataset(&root, split)?;
    let cells =
        bench::run_sweep(index.sequences(), &tracker, &detector, &grid, f.workers.or(a.common.workers).unwrap_or(0))?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    bench::write_sweep_csv(&cells, &out.join("sweep.csv"))?;
    println!("cells={} out={}", cells.len(), out.display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let f = load_config(a.common.config.as_deref())?;
    let out = required(f.out.or(a.common.out).or(f.dataset).or(a.common.dataset), "out")?;
    let seed = f.seed.or(a.seed).unwrap_or(0);
    match a.kind.as_str() {
        "tracking" => {
            let d = synth::TrackingSynthConfig::default();
            let cfg = synth::TrackingSynthConfig {
                seed,
                sequences: a.sequences.unwrap_or(d.sequences),
                frames: a.frames.unwrap_or(d.frames),
                ..d
            };
            synth::synth_tracking(&out, &cfg)?;
        }
        "detection" => {
            let d = synth::DetectionSynthConfig::default();
            let cfg = synth::DetectionSynthConfig { seed, images: a.images.unwrap_or(d.images), ..d };
            let split = split(&f.split.or(a.split).unwrap_or_else(|| "detection-test".into()))?;
            let ex = synth::synth_detection(&out, split, &cfg)?;
            println!("exemplar={}", ex.display());
        }
        "drift" => {
            synth::drift_fixture(&out, seed)?;
        }
        other => bail!(ConfigError(format!("unknown synth kind {other:?}; expected tracking, detection or drift"))),
    }
    println!("out={}", out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut tracker: Option<Box<dyn Tracker>> = match a.tracker.as_deref().map(spec).transpose()? {
        None => None,
        Some(PluginSpec::Echo) => Some(Box::new(EchoTracker::default())),
        Some(PluginSpec::Ncc) => Some(Box::new(NccTracker::new(NccTrackerConfig::default()))),
        Some(other) => bail!(ConfigError(format!("{other} cannot be served as a tracker"))),
    };
    let mut detector: Option<Box<dyn Detector>> = match a.detector.as_deref().map(spec).transpose()? {
        None => None,
        Some(PluginSpec::Empty) => Some(Box::new(EmptyDetector)),
        Some(PluginSpec::Template(Some(p))) => {
            Some(Box::new(TemplateDetector::new(GrayImage::load(&p)?, TemplateDetectorConfig::default())))
        }
        Some(other) => bail!(ConfigError(format!("{other} cannot be served as a detector"))),
    };
    if tracker.is_none() && detector.is_none() {
        bail!(ConfigError("serve needs --tracker and/or --detector".into()));
    }
    let stdin = io::stdin();
    let stdout = io::stdout();
    protocol::serve(
        BufReader::new(stdin.lock()),
        stdout.lock(),
        tracker.as_deref_mut().map(|t| t as &mut dyn Tracker),
        detector.as_deref_mut().map(|d| d as &mut dyn Detector),
    )?;
    Ok(())
}

fn dataset_kind(e: &DatasetError) -> &'static str {
    match e {
        DatasetError::MissingSplit(_) => "missing-split",
        DatasetError::Malformed { .. } => "malformed-annotation",
        DatasetError::CountMismatch { .. } => "count-mismatch",
        DatasetError::MissingImage { .. } => "missing-image",
        DatasetError::Image { .. } => "image",
        DatasetError::EmptyDataset => "empty-dataset",
        DatasetError::InvalidInput(_) => "invalid-input",
        DatasetError::UnknownSplit(_) => "config",
        DatasetError::Io { .. } | DatasetError::Csv(_) => "io",
    }
}

fn plugin_kind(e: &PluginError) -> &'static str {
    match e {
        PluginError::Protocol { .. } | PluginError::Remote { .. } | PluginError::Spawn { .. } => "plugin-protocol",
        _ => "plugin",
    }
}

fn fusion_kind(e: &FusionError) -> &'static str {
    match e {
        FusionError::InvalidConfig(_) => "config",
        FusionError::Plugin { source, .. } => plugin_kind(source),
        FusionError::Metrics(m) => metrics_kind(m),
        _ => "fusion",
    }
}

fn metrics_kind(e: &MetricsError) -> &'static str {
    match e {
        MetricsError::EmptyEvaluation(_) => "empty-evaluation",
        _ => "metrics",
    }
}

/// Stable machine-readable category for an error.
fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(b) = e.downcast_ref::<BenchError>() {
        return match b {
            BenchError::Dataset(d) => dataset_kind(d),
            BenchError::Sequence { source, .. } | BenchError::Fusion(source) => fusion_kind(source),
            BenchError::Plugin(p) => plugin_kind(p),
            BenchError::Metrics(m) => metrics_kind(m),
            BenchError::Config(_) | BenchError::Pool(_) => "config",
            BenchError::Io { .. } => "io",
        };
    }
    if let Some(d) = e.downcast_ref::<DatasetError>() {
        return dataset_kind(d);
    }
    if let Some(p) = e.downcast_ref::<PluginError>() {
        return plugin_kind(p);
    }
    if e.downcast_ref::<ConfigError>().is_some() {
        return "config";
    }
    if e.downcast_ref::<ServeError>().is_some() {
        return "broken-stream";
    }
    "error"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UAVBENCH_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": format!("{e:#}") }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
