//! Benchmark runs: plug-in construction, parallel evaluation and the
//! on-disk result layout.
//!
//! Tracking output directory:
//!
//! ```text
//! summary.json                 configuration, per-sequence and overall scalars
//! curves/{success,precision,norm_precision}.csv          overall curves
//! curves/<sequence>/{success,precision,norm_precision}.csv
//! traces/<sequence>.csv        per-frame fusion trace
//! timing.json                  wall-clock measurements (not reproducible)
//! ```
//!
//! Detection output directory:
//!
//! ```text
//! summary.json                 AP per IoU threshold and mAP
//! curves/pr_iou<thr>.csv       precision/recall points
//! detections.jsonl             predictions per image
//! timing.json
//! ```
//!
//! Everything except `timing.json` is byte-identical across runs with the
//! same inputs, whatever the worker count.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, ImageAnnotation, Sequence, Split};
use crate::fusion::{self, FusionConfig, FusionError, FusionTrace, SweepCell};
use crate::metrics::{self, MetricsError, TrackingEvaluation, TrackingSummary};
use crate::plugins::ncc::GrayImage;
use crate::plugins::reference::EmptyDetector;
use crate::plugins::{
    Detector, EchoTracker, ExternalPlugin, NccTracker, NccTrackerConfig, OracleDetector, OracleTracker, PluginError,
    ScoredBox, TemplateDetector, TemplateDetectorConfig, Tracker,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("sequence {sequence}: {source}")]
    Sequence {
        sequence: String,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Which tracker or detector to run.
///
/// | spec              | tracker                    | detector                        |
/// |-------------------|----------------------------|---------------------------------|
/// | `none`            | -                          | no detector (tracker only)      |
/// | `empty`           | -                          | never detects                   |
/// | `echo`            | repeats the init box       | -                               |
/// | `ncc`             | grayscale NCC tracker      | -                               |
/// | `gt`              | ground truth, score 1      | ground truth, score 1           |
/// | `template`        | -                          | exemplar cut from frame 0 GT    |
/// | `template:<png>`  | -                          | exemplar read from `<png>`      |
/// | `cmd:<command>`   | external process           | external process                |
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PluginSpec {
    None,
    Empty,
    Echo,
    Ncc,
    Gt,
    Template(Option<PathBuf>),
    Cmd(String),
}

impl FromStr for PluginSpec {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                return Err(BenchError::Config("cmd: needs a command line".into()));
            }
            return Ok(PluginSpec::Cmd(cmd.trim().to_owned()));
        }
        if let Some(p) = s.strip_prefix("template:") {
            return Ok(PluginSpec::Template(Some(PathBuf::from(p))));
        }
        match s {
            "none" => Ok(PluginSpec::None),
            "empty" => Ok(PluginSpec::Empty),
            "echo" => Ok(PluginSpec::Echo),
            "ncc" => Ok(PluginSpec::Ncc),
            "gt" => Ok(PluginSpec::Gt),
            "template" => Ok(PluginSpec::Template(None)),
            other => Err(BenchError::Config(format!(
                "unknown plug-in {other:?}; expected none, empty, echo, ncc, gt, template[:<png>] or cmd:<command>"
            ))),
        }
    }
}

impl fmt::Display for PluginSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PluginSpec::None => f.write_str("none"),
            PluginSpec::Empty => f.write_str("empty"),
            PluginSpec::Echo => f.write_str("echo"),
            PluginSpec::Ncc => f.write_str("ncc"),
            PluginSpec::Gt => f.write_str("gt"),
            PluginSpec::Template(None) => f.write_str("template"),
            PluginSpec::Template(Some(p)) => write!(f, "template:{}", p.display()),
            PluginSpec::Cmd(c) => write!(f, "cmd:{c}"),
        }
    }
}

impl Serialize for PluginSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PluginSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Builds the tracker for one sequence.
pub fn make_tracker(spec: &PluginSpec, seq: &Sequence) -> Result<Box<dyn Tracker>, BenchError> {
    Ok(match spec {
        PluginSpec::Echo => Box::new(EchoTracker::default()),
        PluginSpec::Ncc => Box::new(NccTracker::new(NccTrackerConfig::default())),
        PluginSpec::Gt => Box::new(OracleTracker::new(seq.frames.iter().map(|f| (f.image.clone(), f.gt)).collect())),
        PluginSpec::Cmd(c) => Box::new(ExternalPlugin::spawn_command_line(c)?),
        other => return Err(BenchError::Config(format!("{other} cannot be used as a tracker"))),
    })
}

/// Builds the detector for one sequence; `None` means tracker only.
pub fn make_sequence_detector(spec: &PluginSpec, seq: &Sequence) -> Result<Option<Box<dyn Detector>>, BenchError> {
    Ok(Some(match spec {
        PluginSpec::None => return Ok(None),
        PluginSpec::Empty => Box::new(EmptyDetector),
        PluginSpec::Gt => Box::new(OracleDetector::new(
            seq.frames.iter().map(|f| (f.image.clone(), f.gt.into_iter().collect())).collect(),
        )),
        PluginSpec::Template(None) => {
            let first = &seq.frames[0];
            let gt = first.gt.ok_or_else(|| FusionError::MissingInitialBox(seq.name.clone()))?;
            Box::new(TemplateDetector::from_region(&first.image, gt, TemplateDetectorConfig::default())?)
        }
        PluginSpec::Template(Some(p)) => {
            Box::new(TemplateDetector::new(GrayImage::load(p)?, TemplateDetectorConfig::default()))
        }
        PluginSpec::Cmd(c) => Box::new(ExternalPlugin::spawn_command_line(c)?),
        other => return Err(BenchError::Config(format!("{other} cannot be used as a detector"))),
    }))
}

fn make_image_detector(spec: &PluginSpec, images: &[ImageAnnotation]) -> Result<Box<dyn Detector>, BenchError> {
    Ok(match spec {
        PluginSpec::Empty => Box::new(EmptyDetector),
        PluginSpec::Gt => {
            Box::new(OracleDetector::new(images.iter().map(|a| (a.image_path.clone(), a.objects.clone())).collect()))
        }
        PluginSpec::Template(Some(p)) => {
            Box::new(TemplateDetector::new(GrayImage::load(p)?, TemplateDetectorConfig::default()))
        }
        PluginSpec::Cmd(c) => Box::new(ExternalPlugin::spawn_command_line(c)?),
        PluginSpec::Template(None) => {
            return Err(BenchError::Config("detection evaluation needs template:<png>".into()))
        }
        other => return Err(BenchError::Config(format!("{other} cannot be used as a detector"))),
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| BenchError::Pool(e.to_string()))
}

/// Runs `f` over `items` on `workers` threads (0 = all cores) and returns
/// the results in input order. On failure the error of the earliest failing
/// item is returned.
fn ordered_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R, BenchError> + Sync + Send,
) -> Result<Vec<R>, BenchError> {
    let results: Vec<Result<R, BenchError>> = pool(workers)?.install(|| items.par_iter().map(f).collect());
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRunConfig {
    pub tracker: PluginSpec,
    pub detector: PluginSpec,
    pub fusion: FusionConfig,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for TrackRunConfig {
    fn default() -> Self {
        TrackRunConfig {
            tracker: PluginSpec::Ncc,
            detector: PluginSpec::None,
            fusion: FusionConfig::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub name: String,
    pub trace: FusionTrace,
    pub evaluation: TrackingEvaluation,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub config: TrackRunConfig,
    pub sequences: Vec<SequenceRun>,
    pub overall: TrackingEvaluation,
}

pub fn run_sequence(seq: &Sequence, cfg: &TrackRunConfig) -> Result<SequenceRun, BenchError> {
    let wrap = |source: FusionError| BenchError::Sequence { sequence: seq.name.clone(), source };
    let start = Instant::now();
    let mut tracker = make_tracker(&cfg.tracker, seq)?;
    let mut detector = make_sequence_detector(&cfg.detector, seq)?;
    let trace = fusion::fuse_sequence(
        seq,
        tracker.as_mut(),
        detector.as_deref_mut().map(|d| d as &mut dyn Detector),
        &cfg.fusion,
    )
    .map_err(wrap)?;
    drop(tracker);
    drop(detector);
    let elapsed = start.elapsed();
    let evaluation = metrics::evaluate_tracking(&trace.frame_results(seq)).map_err(|e| wrap(e.into()))?;
    Ok(SequenceRun { name: seq.name.clone(), trace, evaluation, elapsed })
}

/// Runs the fused tracker on every sequence. The overall curves are the
/// point-wise mean of the per-sequence curves.
pub fn run_tracking(sequences: &[Sequence], cfg: &TrackRunConfig) -> Result<TrackRun, BenchError> {
    cfg.fusion.validate()?;
    if sequences.is_empty() {
        return Err(DatasetError::EmptyDataset.into());
    }
    let runs = ordered_map(sequences, cfg.workers, |s| run_sequence(s, cfg))?;
    let evals: Vec<TrackingEvaluation> = runs.iter().map(|r| r.evaluation.clone()).collect();
    let overall = metrics::average_evaluations(&evals)?;
    Ok(TrackRun { config: cfg.clone(), sequences: runs, overall })
}

#[derive(Serialize)]
struct SequenceSummary<'a> {
    name: &'a str,
    #[serde(flatten)]
    summary: &'a TrackingSummary,
    detector_frames: usize,
    detector_sourced_frames: usize,
}

#[derive(Serialize)]
struct TrackSummaryFile<'a> {
    split: Split,
    tracker: &'a PluginSpec,
    detector: &'a PluginSpec,
    tau_t: f64,
    tau_d: f64,
    state_feedback: bool,
    overall: &'a TrackingSummary,
    sequences: Vec<SequenceSummary<'a>>,
}

#[derive(Serialize)]
struct Timing<'a> {
    total_seconds: f64,
    tasks: usize,
    fps: Option<f64>,
    per_task: Vec<(&'a str, f64)>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn mkdir(p: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(p).map_err(io_err(p))
}

fn write_curves(dir: &Path, eval: &TrackingEvaluation) -> Result<(), BenchError> {
    mkdir(dir)?;
    eval.success.write_csv(&dir.join("success.csv"))?;
    eval.precision.write_csv(&dir.join("precision.csv"))?;
    eval.norm_precision.write_csv(&dir.join("norm_precision.csv"))?;
    Ok(())
}

impl TrackRun {
    pub fn write(&self, out: &Path) -> Result<(), BenchError> {
        mkdir(&out.join("traces"))?;
        write_curves(&out.join("curves"), &self.overall)?;
        for r in &self.sequences {
            write_curves(&out.join("curves").join(&r.name), &r.evaluation)?;
            r.trace.write_csv(&out.join("traces").join(format!("{}.csv", r.name)))?;
        }
        let c = &self.config;
        write_json(
            &out.join("summary.json"),
            &TrackSummaryFile {
                split: Split::Tracking,
                tracker: &c.tracker,
                detector: &c.detector,
                tau_t: c.fusion.tau_t,
                tau_d: c.fusion.tau_d,
                state_feedback: c.fusion.state_feedback,
                overall: &self.overall.summary,
                sequences: self
                    .sequences
                    .iter()
                    .map(|r| SequenceSummary {
                        name: &r.name,
                        summary: &r.evaluation.summary,
                        detector_frames: r.trace.detector_frames().len(),
                        detector_sourced_frames: r.trace.detector_sourced_frames().len(),
                    })
                    .collect(),
            },
        )?;
        let frames: usize = self.sequences.iter().map(|r| r.trace.rows.len()).sum();
        let total: Duration = self.sequences.iter().map(|r| r.elapsed).sum();
        write_json(
            &out.join("timing.json"),
            &Timing {
                total_seconds: total.as_secs_f64(),
                tasks: frames,
                fps: (!total.is_zero()).then(|| frames as f64 / total.as_secs_f64()),
                per_task: self.sequences.iter().map(|r| (r.name.as_str(), r.elapsed.as_secs_f64())).collect(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRunConfig {
    pub detector: PluginSpec,
    pub iou_thresholds: Vec<f64>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct DetectRun {
    pub config: DetectRunConfig,
    pub images: Vec<PathBuf>,
    pub predictions: Vec<Vec<ScoredBox>>,
    pub durations: Vec<Duration>,
    pub evaluation: metrics::DetectionEvaluation,
}

/// Runs the detector over every image and scores it at each IoU threshold.
/// Images are split into one contiguous chunk per worker; each chunk gets
/// its own detector instance.
pub fn run_detection(images: &[ImageAnnotation], cfg: &DetectRunConfig) -> Result<DetectRun, BenchError> {
    if images.is_empty() {
        return Err(DatasetError::EmptyDataset.into());
    }
    let workers = if cfg.workers == 0 { rayon::current_num_threads() } else { cfg.workers };
    let chunk = images.len().div_ceil(workers.max(1));
    let chunks: Vec<&[ImageAnnotation]> = images.chunks(chunk).collect();
    let per_chunk = ordered_map(&chunks, workers, |part| {
        let mut det = make_image_detector(&cfg.detector, images)?;
        let mut out = Vec::with_capacity(part.len());
        for a in part.iter() {
            let start = Instant::now();
            let dets =
                det.detect(&a.image_path)?.into_iter().map(ScoredBox::validate).collect::<Result<Vec<_>, _>>()?;
            out.push((dets, start.elapsed()));
        }
        Ok(out)
    })?;
    let (predictions, durations): (Vec<_>, Vec<_>) = per_chunk.into_iter().flatten().unzip();
    let gts: Vec<Vec<_>> = images.iter().map(|a| a.objects.clone()).collect();
    let mut evaluation = metrics::detection_map(&predictions, &gts, &cfg.iou_thresholds)?;
    evaluation.summary.fps = None;
    Ok(DetectRun {
        config: cfg.clone(),
        images: images.iter().map(|a| a.image_path.clone()).collect(),
        predictions,
        durations,
        evaluation,
    })
}

#[derive(Serialize)]
struct DetectSummaryFile<'a> {
    split: Split,
    detector: &'a PluginSpec,
    images: usize,
    ground_truths: usize,
    #[serde(flatten)]
    summary: &'a metrics::DetectionSummary,
}

impl DetectRun {
    pub fn fps(&self) -> Option<f64> {
        metrics::throughput_fps(&self.durations).ok()
    }

    pub fn write(&self, out: &Path, split: Split) -> Result<(), BenchError> {
        let curves = out.join("curves");
        mkdir(&curves)?;
        for (a, r) in self.evaluation.summary.ap_per_iou.iter().zip(&self.evaluation.per_iou) {
            r.pr.write_csv(&curves.join(format!("pr_iou{:.2}.csv", a.iou)))?;
        }
        write_json(
            &out.join("summary.json"),
            &DetectSummaryFile {
                split,
                detector: &self.config.detector,
                images: self.images.len(),
                ground_truths: self.evaluation.per_iou.first().map_or(0, |r| r.ground_truths),
                summary: &self.evaluation.summary,
            },
        )?;
        let path = out.join("detections.jsonl");
        let mut f = io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        for (img, dets) in self.images.iter().zip(&self.predictions) {
            let line = serde_json::json!({ "image": img, "detections": dets });
            writeln!(f, "{line}").map_err(io_err(&path))?;
        }
        f.flush().map_err(io_err(&path))?;
        let total: Duration = self.durations.iter().sum();
        write_json(
            &out.join("timing.json"),
            &Timing {
                total_seconds: total.as_secs_f64(),
                tasks: self.durations.len(),
                fps: self.fps(),
                per_task: Vec::new(),
            },
        )
    }
}

/// Records plug-in outputs once per sequence, then replays every
/// `(tau_t, tau_d)` pair of the grid.
pub fn run_sweep(
    sequences: &[Sequence],
    tracker: &PluginSpec,
    detector: &PluginSpec,
    grid: &[(f64, f64)],
    workers: usize,
) -> Result<Vec<SweepCell>, BenchError> {
    if sequences.is_empty() {
        return Err(DatasetError::EmptyDataset.into());
    }
    // The detector must have run wherever any tau_t of the grid consults it.
    let detect_below = grid.iter().map(|g| g.0).fold(0.0, f64::max);
    let recordings = ordered_map(sequences, workers, |seq| {
        let mut t = make_tracker(tracker, seq)?;
        let mut d = make_sequence_detector(detector, seq)?;
        fusion::record_sequence(seq, t.as_mut(), d.as_deref_mut().map(|d| d as &mut dyn Detector), detect_below)
            .map_err(|source| BenchError::Sequence { sequence: seq.name.clone(), source })
    })?;
    let pairs: Vec<(&Sequence, &fusion::Recording)> = sequences.iter().zip(&recordings).collect();
    Ok(fusion::threshold_sweep(&pairs, grid)?)
}

pub fn write_sweep_csv(cells: &[SweepCell], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Config(e.to_string()))?;
    let csv_err = |e: csv::Error| BenchError::Config(e.to_string());
    w.write_record(["tau_t", "tau_d", "success_auc", "norm_precision_auc", "precision_at_20", "detector_frames"])
        .map_err(csv_err)?;
    for c in cells {
        let n: usize = c.detector_frames.iter().map(|s| s.len()).sum();
        w.write_record([
            c.tau_t.to_string(),
            c.tau_d.to_string(),
            c.summary.success_auc.to_string(),
            c.summary.norm_precision_auc.to_string(),
            c.summary.precision_at_20.to_string(),
            n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}
