//! Detector-fused tracking.
//!
//! The tracker runs on every frame. When its confidence drops below
//! `tau_t` the detector is consulted on the full frame, and its best box
//! replaces the tracker's when that detection scores strictly above both
//! `tau_d` and the tracker's own score. Every other path reports the tracker
//! box. Ties go to the tracker.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sequence;
use crate::geometry::BBox;
use crate::metrics::{self, FrameResult, MetricsError, TrackingEvaluation, TrackingSummary};
use crate::plugins::{best_detection, Detector, PluginError, ScoredBox, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub tau_t: f64,
    pub tau_d: f64,
    /// Re-initialize the tracker on the detector box after an override.
    #[serde(default)]
    pub state_feedback: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { tau_t: 0.9, tau_d: 0.9, state_feedback: false }
    }
}

impl FusionConfig {
    pub fn new(tau_t: f64, tau_d: f64) -> Result<Self, FusionError> {
        FusionConfig { tau_t, tau_d, state_feedback: false }.validate()
    }

    pub fn validate(self) -> Result<Self, FusionError> {
        for (name, v) in [("tau_t", self.tau_t), ("tau_d", self.tau_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FusionError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("sequence {0} has no ground truth on its first frame")]
    MissingInitialBox(String),
    #[error("frame {frame}: {source}")]
    Plugin {
        frame: usize,
        #[source]
        source: PluginError,
        /// Rows completed before the failure.
        partial: Box<FusionTrace>,
    },
    #[error("replay needs detections for frame {0} but none were recorded")]
    MissingRecording(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("malformed trace file {path}: {msg}")]
    MalformedTrace { path: String, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Tracker,
    Detector,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Tracker => "tracker",
            Source::Detector => "detector",
        })
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tracker" => Ok(Source::Tracker),
            "detector" => Ok(Source::Detector),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

/// Decision record for one frame after the first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame: usize,
    pub source: Source,
    pub result: BBox,
    pub score_t: f64,
    pub detector_invoked: bool,
    pub score_d: Option<f64>,
    pub detection_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace {
    /// Reported result for frame 0, the initial ground truth.
    pub initial: BBox,
    pub rows: Vec<TraceRow>,
}

const TRACE_HEADER: [&str; 11] =
    ["frame", "source", "x", "y", "w", "h", "score_t", "detector_invoked", "score_d", "detection_count", "note"];

impl FusionTrace {
    /// Reported boxes for frames `0..N`.
    pub fn results(&self) -> Vec<BBox> {
        std::iter::once(self.initial).chain(self.rows.iter().map(|r| r.result)).collect()
    }

    pub fn detector_frames(&self) -> BTreeSet<usize> {
        self.rows.iter().filter(|r| r.detector_invoked).map(|r| r.frame).collect()
    }

    pub fn detector_sourced_frames(&self) -> BTreeSet<usize> {
        self.rows.iter().filter(|r| r.source == Source::Detector).map(|r| r.frame).collect()
    }

    /// Pairs results with a sequence's ground truth for scoring.
    pub fn frame_results(&self, seq: &Sequence) -> Vec<FrameResult> {
        self.results().into_iter().zip(&seq.frames).map(|(pred, f)| FrameResult { pred, gt: f.gt }).collect()
    }

    /// One row per frame. Frame 0 carries `init` in the note column and no
    /// scores.
    pub fn write_csv(&self, path: &Path) -> Result<(), FusionError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TRACE_HEADER)?;
        let b = self.initial;
        w.write_record([
            "0".into(),
            Source::Tracker.to_string(),
            b.x.to_string(),
            b.y.to_string(),
            b.w.to_string(),
            b.h.to_string(),
            String::new(),
            "false".into(),
            String::new(),
            "0".into(),
            "init".into(),
        ])?;
        for r in &self.rows {
            w.write_record([
                r.frame.to_string(),
                r.source.to_string(),
                r.result.x.to_string(),
                r.result.y.to_string(),
                r.result.w.to_string(),
                r.result.h.to_string(),
                r.score_t.to_string(),
                r.detector_invoked.to_string(),
                r.score_d.map(|s| s.to_string()).unwrap_or_default(),
                r.detection_count.to_string(),
                String::new(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FusionTrace, FusionError> {
        let bad = |line: usize, msg: &str| FusionError::MalformedTrace {
            path: path.display().to_string(),
            msg: format!("line {line}: {msg}"),
        };
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != TRACE_HEADER {
            return Err(bad(1, "unexpected header"));
        }
        let mut initial = None;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let num = |j: usize| field(j).parse::<f64>().map_err(|_| bad(line, TRACE_HEADER[j]));
            let bbox = BBox::new(num(2)?, num(3)?, num(4)?, num(5)?);
            if field(10) == "init" {
                initial = Some(bbox);
                continue;
            }
            rows.push(TraceRow {
                frame: field(0).parse().map_err(|_| bad(line, "frame"))?,
                source: field(1).parse().map_err(|e: String| bad(line, &e))?,
                result: bbox,
                score_t: num(6)?,
                detector_invoked: field(7).parse().map_err(|_| bad(line, "detector_invoked"))?,
                score_d: if field(8).is_empty() { None } else { Some(num(8)?) },
                detection_count: field(9).parse().map_err(|_| bad(line, "detection_count"))?,
            });
        }
        let initial = initial.ok_or_else(|| bad(2, "missing init row"))?;
        Ok(FusionTrace { initial, rows })
    }
}

/// Outcome of one fusion decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub result: BBox,
    pub source: Source,
    pub detector_invoked: bool,
    pub score_d: Option<f64>,
    pub detection_count: usize,
}

impl Step {
    fn into_row(self, frame: usize, score_t: f64) -> TraceRow {
        TraceRow {
            frame,
            source: self.source,
            result: self.result,
            score_t,
            detector_invoked: self.detector_invoked,
            score_d: self.score_d,
            detection_count: self.detection_count,
        }
    }
}

/// One fusion decision. `detect` runs at most once, and only when the
/// tracker score is below `tau_t`.
pub fn fuse_step<F>(tracker_out: ScoredBox, detect: F, cfg: &FusionConfig) -> Result<Step, PluginError>
where
    F: FnOnce() -> Result<Vec<ScoredBox>, PluginError>,
{
    let tracker_only = Step {
        result: tracker_out.bbox,
        source: Source::Tracker,
        detector_invoked: false,
        score_d: None,
        detection_count: 0,
    };
    if tracker_out.score >= cfg.tau_t {
        return Ok(tracker_only);
    }
    let dets = detect()?;
    let mut step = Step { detector_invoked: true, detection_count: dets.len(), ..tracker_only };
    if let Some(best) = best_detection(&dets) {
        step.score_d = Some(best.score);
        if best.score > cfg.tau_d && best.score > tracker_out.score {
            step.result = best.bbox;
            step.source = Source::Detector;
        }
    }
    Ok(step)
}

/// Runs the fused tracker over `seq`. Without a detector this is the
/// tracker-only baseline.
pub fn fuse_sequence(
    seq: &Sequence,
    tracker: &mut dyn Tracker,
    mut detector: Option<&mut dyn Detector>,
    cfg: &FusionConfig,
) -> Result<FusionTrace, FusionError> {
    cfg.validate()?;
    let initial = seq.initial_box().ok_or_else(|| FusionError::MissingInitialBox(seq.name.clone()))?;
    let mut trace = FusionTrace { initial, rows: Vec::with_capacity(seq.len().saturating_sub(1)) };
    let fail = |frame: usize, source: PluginError, trace: &FusionTrace| FusionError::Plugin {
        frame,
        source,
        partial: Box::new(trace.clone()),
    };

    if let Err(e) = tracker.init(&seq.frames[0].image, initial) {
        return Err(fail(0, e, &trace));
    }
    for (t, frame) in seq.frames.iter().enumerate().skip(1) {
        let out = match tracker.track(&frame.image).and_then(ScoredBox::validate) {
            Ok(o) => o,
            Err(e) => return Err(fail(t, e, &trace)),
        };
        let step = match detector.as_deref_mut() {
            Some(d) => fuse_step(out, || d.detect(&frame.image)?.into_iter().map(ScoredBox::validate).collect(), cfg),
            // tau_t = 0 can never gate the detector in.
            None => fuse_step(out, || Ok(Vec::new()), &FusionConfig { tau_t: 0.0, ..*cfg }),
        };
        let step = match step {
            Ok(s) => s,
            Err(e) => return Err(fail(t, e, &trace)),
        };
        trace.rows.push(step.into_row(t, out.score));
        if cfg.state_feedback && step.source == Source::Detector {
            if let Err(e) = tracker.init(&frame.image, step.result) {
                return Err(fail(t, e, &trace));
            }
        }
    }
    Ok(trace)
}

/// Plug-in outputs captured once per sequence so many threshold settings
/// can be replayed without re-running the plug-ins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub initial: BBox,
    /// Tracker output for frames `1..N`.
    pub tracker: Vec<ScoredBox>,
    /// Detector output for frames `1..N`, where it was run.
    pub detections: Vec<Option<Vec<ScoredBox>>>,
}

/// Runs the tracker on every frame and the detector on every frame whose
/// tracker score is below `detect_below`. Pass `1.0` or more (or any value
/// above every `tau_t` that will be replayed) to cover a sweep.
pub fn record_sequence(
    seq: &Sequence,
    tracker: &mut dyn Tracker,
    mut detector: Option<&mut dyn Detector>,
    detect_below: f64,
) -> Result<Recording, FusionError> {
    let initial = seq.initial_box().ok_or_else(|| FusionError::MissingInitialBox(seq.name.clone()))?;
    let empty = || Box::new(FusionTrace { initial, rows: Vec::new() });
    tracker.init(&seq.frames[0].image, initial).map_err(|source| FusionError::Plugin {
        frame: 0,
        source,
        partial: empty(),
    })?;
    let mut rec = Recording { initial, tracker: Vec::new(), detections: Vec::new() };
    for (t, frame) in seq.frames.iter().enumerate().skip(1) {
        let wrap = |source| FusionError::Plugin { frame: t, source, partial: empty() };
        let out = tracker.track(&frame.image).and_then(ScoredBox::validate).map_err(wrap)?;
        let dets = match detector.as_deref_mut() {
            Some(d) if out.score < detect_below => Some(
                d.detect(&frame.image)
                    .and_then(|ds| ds.into_iter().map(ScoredBox::validate).collect())
                    .map_err(wrap)?,
            ),
            Some(_) => None,
            None => Some(Vec::new()),
        };
        rec.tracker.push(out);
        rec.detections.push(dets);
    }
    Ok(rec)
}

/// Re-runs the fusion decisions on recorded outputs.
pub fn replay(rec: &Recording, cfg: &FusionConfig) -> Result<FusionTrace, FusionError> {
    cfg.validate()?;
    let mut trace = FusionTrace { initial: rec.initial, rows: Vec::with_capacity(rec.tracker.len()) };
    for (i, (out, dets)) in rec.tracker.iter().zip(&rec.detections).enumerate() {
        let frame = i + 1;
        let step = fuse_step(*out, || dets.clone().ok_or(PluginError::Other(String::new())), cfg)
            .map_err(|_| FusionError::MissingRecording(frame))?;
        trace.rows.push(step.into_row(frame, out.score));
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub tau_t: f64,
    pub tau_d: f64,
    pub summary: TrackingSummary,
    /// Frames (per sequence) on which the detector was consulted.
    pub detector_frames: Vec<BTreeSet<usize>>,
}

/// Scores every `(tau_t, tau_d)` cell by replaying the same recordings.
/// Sequence scores are averaged point-wise per curve.
pub fn threshold_sweep(
    sequences: &[(&Sequence, &Recording)],
    grid: &[(f64, f64)],
) -> Result<Vec<SweepCell>, FusionError> {
    if grid.is_empty() {
        return Err(FusionError::InvalidConfig("empty threshold grid".into()));
    }
    grid.iter()
        .map(|&(tau_t, tau_d)| {
            let cfg = FusionConfig::new(tau_t, tau_d)?;
            let mut evals: Vec<TrackingEvaluation> = Vec::new();
            let mut detector_frames = Vec::new();
            for (seq, rec) in sequences {
                let trace = replay(rec, &cfg)?;
                evals.push(metrics::evaluate_tracking(&trace.frame_results(seq))?);
                detector_frames.push(trace.detector_frames());
            }
            let summary = metrics::average_evaluations(&evals)?.summary;
            Ok(SweepCell { tau_t, tau_d, summary, detector_frames })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    const TB: BBox = BBox::new(0.0, 0.0, 10.0, 10.0);
    const DB: BBox = BBox::new(50.0, 50.0, 10.0, 10.0);

    fn step(score_t: f64, dets: &[f64], cfg: FusionConfig) -> (Step, usize) {
        let calls = Cell::new(0);
        let s = fuse_step(
            ScoredBox::new(TB, score_t),
            || {
                calls.set(calls.get() + 1);
                Ok(dets.iter().enumerate().map(|(i, &s)| ScoredBox::new(DB.translate(i as f64, 0.0), s)).collect())
            },
            &cfg,
        )
        .unwrap();
        (s, calls.get())
    }

    #[test]
    fn decision_paths() {
        let cfg = FusionConfig::default();
        let (s, calls) = step(0.95, &[1.0], cfg);
        assert_eq!((s.result, s.source, s.detector_invoked, calls), (TB, Source::Tracker, false, 0));

        let (s, calls) = step(0.5, &[0.3, 0.95], cfg);
        assert_eq!(s.result, DB.translate(1.0, 0.0));
        assert_eq!((s.source, s.score_d, s.detection_count, calls), (Source::Detector, Some(0.95), 2, 1));

        let (s, _) = step(0.5, &[0.6], cfg);
        assert_eq!((s.result, s.source, s.score_d), (TB, Source::Tracker, Some(0.6)));

        let (s, calls) = step(0.5, &[], cfg);
        assert_eq!((s.result, s.source, s.detector_invoked, s.score_d, calls), (TB, Source::Tracker, true, None, 1));
    }

    #[test]
    fn ties_go_to_the_tracker() {
        let cfg = FusionConfig::default();
        // score_t == tau_t: detector not consulted.
        assert!(!step(0.9, &[1.0], cfg).0.detector_invoked);
        // score_d == tau_d: not strictly above.
        assert_eq!(step(0.5, &[0.9], cfg).0.source, Source::Tracker);
        // score_d == score_t with a low tau_d.
        let low = FusionConfig::new(0.9, 0.1).unwrap();
        assert_eq!(step(0.5, &[0.5], low).0.source, Source::Tracker);
        // Equal best scores: the first detection wins.
        let (s, _) = step(0.5, &[0.97, 0.97], cfg);
        assert_eq!(s.result, DB);
    }

    #[test]
    fn detector_beats_tracker_only_when_above_both() {
        let cfg = FusionConfig::new(0.9, 0.2).unwrap();
        assert_eq!(step(0.6, &[0.5], cfg).0.source, Source::Tracker);
        assert_eq!(step(0.6, &[0.61], cfg).0.source, Source::Detector);
    }

    #[test]
    fn detector_errors_propagate() {
        let r = fuse_step(ScoredBox::new(TB, 0.1), || Err(PluginError::Other("boom".into())), &FusionConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(FusionConfig::new(1.1, 0.5).is_err());
        assert!(FusionConfig::new(0.5, -0.1).is_err());
        assert!(FusionConfig::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn trace_csv_round_trip() {
        let trace = FusionTrace {
            initial: BBox::new(1.0, 2.0, 3.0, 4.0),
            rows: vec![
                TraceRow {
                    frame: 1,
                    source: Source::Tracker,
                    result: BBox::new(1.5, 2.0, 3.0, 4.0),
                    score_t: 0.95,
                    detector_invoked: false,
                    score_d: None,
                    detection_count: 0,
                },
                TraceRow {
                    frame: 2,
                    source: Source::Detector,
                    result: BBox::new(7.0, 2.0, 3.0, 4.0),
                    score_t: 0.1,
                    detector_invoked: true,
                    score_d: Some(0.99),
                    detection_count: 3,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        trace.write_csv(&p).unwrap();
        assert_eq!(FusionTrace::read_csv(&p).unwrap(), trace);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "frame,source,x,y,w,h,score_t,detector_invoked,score_d,detection_count,note"
        );
    }

    #[test]
    fn replay_needs_recorded_detections() {
        let rec = Recording { initial: TB, tracker: vec![ScoredBox::new(TB, 0.3)], detections: vec![None] };
        assert!(matches!(replay(&rec, &FusionConfig::default()), Err(FusionError::MissingRecording(1))));
        // Not needed when the tracker is confident enough.
        assert!(replay(&rec, &FusionConfig::new(0.2, 0.9).unwrap()).is_ok());
    }
}
