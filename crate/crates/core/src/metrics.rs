//! Tracking curves (success, precision, normalized precision) and detection
//! metrics (AP, mAP, P-R curves, throughput).
//!
//! Threshold grids:
//! - success: 21 IoU thresholds `0.00, 0.05, ..., 1.00`, counted with strict `>`.
//! - precision: 51 pixel thresholds `0, 1, ..., 50`, counted with `<=`; the
//!   scalar is the value at 20 px.
//! - normalized precision: 51 thresholds `0.00, 0.01, ..., 0.50`, counted with `<=`.
//!
//! Frames whose ground truth is absent are excluded from every tracking curve
//! and counted in `excluded_frames`.

use std::io;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BBox, GeometryError};
use crate::plugins::ScoredBox;

pub const SUCCESS_STEPS: usize = 20;
pub const PRECISION_MAX_PX: usize = 50;
pub const PRECISION_SCALAR_PX: usize = 20;
pub const NORM_PRECISION_STEPS: usize = 50;
pub const NORM_PRECISION_MAX: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid score {0}: must be finite")]
    InvalidScore(f64),
    #[error("predictions cover {preds} images but ground truth covers {gts}")]
    ImageCountMismatch { preds: usize, gts: usize },
    #[error("invalid IoU threshold {0}")]
    InvalidThreshold(f64),
    #[error("throughput measurement spans zero time")]
    ZeroDuration,
    #[error("malformed curve file {path}: {msg}")]
    MalformedCurve { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Threshold-indexed metric samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    /// Arithmetic mean of the sampled values.
    pub fn auc(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn value_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|&t| t == threshold).map(|i| self.values[i])
    }

    /// Writes `threshold,value` rows under a header.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "value"])?;
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Curve, MetricsError> {
        let malformed = |msg: String| MetricsError::MalformedCurve { path: path.display().to_string(), msg };
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["threshold", "value"] {
            return Err(malformed(format!("unexpected header {header:?}")));
        }
        let mut curve = Curve { thresholds: Vec::new(), values: Vec::new() };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64, MetricsError> {
                rec.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(format!("line {}: bad field {}", i + 2, j)))
            };
            curve.thresholds.push(parse(0)?);
            curve.values.push(parse(1)?);
        }
        Ok(curve)
    }
}

/// One evaluated frame: the reported box and the ground truth, if present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub pred: BBox,
    pub gt: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub curve: Curve,
    /// AUC for success and normalized precision; value at 20 px for precision.
    pub scalar: f64,
    pub evaluated_frames: usize,
    pub excluded_frames: usize,
}

pub fn success_thresholds() -> Vec<f64> {
    (0..=SUCCESS_STEPS).map(|i| i as f64 / SUCCESS_STEPS as f64).collect()
}

pub fn precision_thresholds() -> Vec<f64> {
    (0..=PRECISION_MAX_PX).map(|i| i as f64).collect()
}

pub fn norm_precision_thresholds() -> Vec<f64> {
    // Divide rather than multiply by the step so grid points like 0.25 are exact.
    let per_unit = NORM_PRECISION_STEPS as f64 / NORM_PRECISION_MAX;
    (0..=NORM_PRECISION_STEPS).map(|i| i as f64 / per_unit).collect()
}

/// Applies `measure` to every frame with present ground truth.
fn per_frame<F>(results: &[FrameResult], measure: F) -> Result<(Vec<f64>, usize), MetricsError>
where
    F: Fn(&BBox, &BBox) -> Result<f64, GeometryError>,
{
    let mut out = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for r in results {
        match &r.gt {
            Some(gt) => out.push(measure(&r.pred, gt)?),
            None => excluded += 1,
        }
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyEvaluation("no frame has a present ground truth"));
    }
    Ok((out, excluded))
}

fn fraction<F: Fn(f64) -> bool>(samples: &[f64], pass: F) -> f64 {
    samples.iter().filter(|&&s| pass(s)).count() as f64 / samples.len() as f64
}

pub fn success_curve(results: &[FrameResult]) -> Result<CurveResult, MetricsError> {
    let (ious, excluded) = per_frame(results, geometry::iou)?;
    let thresholds = success_thresholds();
    let values = thresholds.iter().map(|&t| fraction(&ious, |v| v > t)).collect();
    let curve = Curve { thresholds, values };
    Ok(CurveResult { scalar: curve.auc(), curve, evaluated_frames: ious.len(), excluded_frames: excluded })
}

pub fn precision_curve(results: &[FrameResult]) -> Result<CurveResult, MetricsError> {
    let (errors, excluded) = per_frame(results, geometry::center_error)?;
    let thresholds = precision_thresholds();
    let values: Vec<f64> = thresholds.iter().map(|&t| fraction(&errors, |e| e <= t)).collect();
    let scalar = values[PRECISION_SCALAR_PX];
    Ok(CurveResult {
        curve: Curve { thresholds, values },
        scalar,
        evaluated_frames: errors.len(),
        excluded_frames: excluded,
    })
}

pub fn norm_precision_curve(results: &[FrameResult]) -> Result<CurveResult, MetricsError> {
    let (errors, excluded) = per_frame(results, geometry::normalized_center_error)?;
    let thresholds = norm_precision_thresholds();
    let values = thresholds.iter().map(|&t| fraction(&errors, |e| e <= t)).collect();
    let curve = Curve { thresholds, values };
    Ok(CurveResult { scalar: curve.auc(), curve, evaluated_frames: errors.len(), excluded_frames: excluded })
}

/// Scalar row in the layout of a tracking results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub success_auc: f64,
    pub norm_precision_auc: f64,
    pub precision_at_20: f64,
    pub evaluated_frames: usize,
    pub excluded_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingEvaluation {
    pub success: Curve,
    pub precision: Curve,
    pub norm_precision: Curve,
    pub summary: TrackingSummary,
}

/// All three tracking curves for one result set.
pub fn evaluate_tracking(results: &[FrameResult]) -> Result<TrackingEvaluation, MetricsError> {
    let s = success_curve(results)?;
    let p = precision_curve(results)?;
    let n = norm_precision_curve(results)?;
    let summary = TrackingSummary {
        success_auc: s.scalar,
        norm_precision_auc: n.scalar,
        precision_at_20: p.scalar,
        evaluated_frames: s.evaluated_frames,
        excluded_frames: s.excluded_frames,
    };
    Ok(TrackingEvaluation { success: s.curve, precision: p.curve, norm_precision: n.curve, summary })
}

/// Averages several evaluations point-wise (one per sequence). Scalars are
/// recomputed from the averaged curves; frame counts are summed.
pub fn average_evaluations(evals: &[TrackingEvaluation]) -> Result<TrackingEvaluation, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::EmptyEvaluation("no sequences to aggregate"));
    }
    let mean_curve = |pick: fn(&TrackingEvaluation) -> &Curve| {
        let first = pick(&evals[0]);
        let values = (0..first.values.len())
            .map(|i| evals.iter().map(|e| pick(e).values[i]).sum::<f64>() / evals.len() as f64)
            .collect();
        Curve { thresholds: first.thresholds.clone(), values }
    };
    let success = mean_curve(|e| &e.success);
    let precision = mean_curve(|e| &e.precision);
    let norm_precision = mean_curve(|e| &e.norm_precision);
    let summary = TrackingSummary {
        success_auc: success.auc(),
        norm_precision_auc: norm_precision.auc(),
        precision_at_20: precision.values[PRECISION_SCALAR_PX],
        evaluated_frames: evals.iter().map(|e| e.summary.evaluated_frames).sum(),
        excluded_frames: evals.iter().map(|e| e.summary.excluded_frames).sum(),
    };
    Ok(TrackingEvaluation { success, precision, norm_precision, summary })
}

/// Precision/recall after each prediction in descending-score order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

impl PrCurve {
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["recall", "precision"])?;
        for (r, p) in self.recall.iter().zip(&self.precision) {
            w.write_record([r.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<PrCurve, MetricsError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = PrCurve::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| {
                rec.get(j).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| MetricsError::MalformedCurve {
                    path: path.display().to_string(),
                    msg: format!("line {}: bad field {}", i + 2, j),
                })
            };
            out.recall.push(field(0)?);
            out.precision.push(field(1)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub pr: PrCurve,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
}

/// Average precision at one IoU matching threshold.
///
/// Predictions from all images are ranked by descending score (stable, so
/// equal scores keep image order then in-image order). Each prediction is
/// matched against the unmatched ground truth in its image with the highest
/// IoU and counts as a true positive when that IoU reaches `iou_thr`. AP is
/// the all-point interpolated area under the precision envelope.
pub fn detection_ap(predictions: &[Vec<ScoredBox>], gts: &[Vec<BBox>], iou_thr: f64) -> Result<ApResult, MetricsError> {
    if predictions.len() != gts.len() {
        return Err(MetricsError::ImageCountMismatch { preds: predictions.len(), gts: gts.len() });
    }
    if !(iou_thr.is_finite() && iou_thr > 0.0 && iou_thr <= 1.0) {
        return Err(MetricsError::InvalidThreshold(iou_thr));
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(MetricsError::EmptyEvaluation("no ground-truth objects"));
    }
    for g in gts.iter().flatten() {
        g.validate()?;
    }

    let mut ranked: Vec<(usize, &ScoredBox)> = Vec::new();
    for (img, preds) in predictions.iter().enumerate() {
        for p in preds {
            if !p.score.is_finite() {
                return Err(MetricsError::InvalidScore(p.score));
            }
            p.bbox.validate()?;
            ranked.push((img, p));
        }
    }
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pr = PrCurve::default();
    for (img, pred) in ranked {
        let best = gts[img]
            .iter()
            .enumerate()
            .filter(|(j, _)| !matched[img][*j])
            .map(|(j, g)| (j, geometry::iou_unchecked(&pred.bbox, g)))
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match best {
            Some((j, v)) if v >= iou_thr => {
                matched[img][j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        pr.recall.push(tp as f64 / n_gt as f64);
        pr.precision.push(tp as f64 / (tp + fp) as f64);
    }

    Ok(ApResult { ap: interpolated_ap(&pr), pr, true_positives: tp, false_positives: fp, ground_truths: n_gt })
}

/// All-point interpolation: sum over recall steps of the maximum precision
/// at any equal-or-higher recall.
fn interpolated_ap(pr: &PrCurve) -> f64 {
    let n = pr.precision.len();
    let mut envelope = pr.precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&r, &p) in pr.recall.iter().zip(&envelope) {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// The standard 0.50:0.05:0.95 IoU set.
pub fn default_map_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApAtIou {
    pub iou: f64,
    pub ap: f64,
}

/// Scalar row in the layout of a detection results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub ap_per_iou: Vec<ApAtIou>,
    #[serde(rename = "mAP")]
    pub map_score: f64,
    /// Measured, hardware-dependent; `None` when no timing was recorded.
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvaluation {
    pub summary: DetectionSummary,
    pub per_iou: Vec<ApResult>,
}

/// AP at every threshold in `thresholds` and their mean.
pub fn detection_map(
    predictions: &[Vec<ScoredBox>],
    gts: &[Vec<BBox>],
    thresholds: &[f64],
) -> Result<DetectionEvaluation, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::EmptyEvaluation("no IoU thresholds requested"));
    }
    let per_iou = thresholds.iter().map(|&t| detection_ap(predictions, gts, t)).collect::<Result<Vec<_>, _>>()?;
    let ap_per_iou: Vec<ApAtIou> = thresholds.iter().zip(&per_iou).map(|(&iou, r)| ApAtIou { iou, ap: r.ap }).collect();
    let map_score = ap_per_iou.iter().map(|a| a.ap).sum::<f64>() / ap_per_iou.len() as f64;
    Ok(DetectionEvaluation { summary: DetectionSummary { ap_per_iou, map_score, fps: None }, per_iou })
}

/// Tasks per second over the summed duration of the timed tasks.
pub fn throughput_fps(tasks: &[Duration]) -> Result<f64, MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::EmptyEvaluation("no timed tasks"));
    }
    let total: Duration = tasks.iter().sum();
    if total.is_zero() {
        return Err(MetricsError::ZeroDuration);
    }
    Ok(tasks.len() as f64 / total.as_secs_f64())
}
