//! Deterministic in-process trackers and detectors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou_unchecked, BBox};
use crate::plugins::ncc::{ncc_at, GrayImage, Integral, PixelRect, Template};
use crate::plugins::{Detector, PluginError, ScoredBox, Tracker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NccTrackerConfig {
    /// Search window size as a multiple of the previous box.
    pub search_factor: f64,
    /// Candidate box scales relative to the previous box.
    pub scales: Vec<f64>,
}

impl Default for NccTrackerConfig {
    fn default() -> Self {
        NccTrackerConfig { search_factor: 2.0, scales: vec![0.96, 1.0, 1.04] }
    }
}

#[derive(Debug)]
struct NccState {
    template: Template,
    scaled: HashMap<(usize, usize), Template>,
    current: BBox,
}

/// Grayscale NCC tracker against the frame-0 template.
///
/// Each frame searches a window `search_factor` times the previous box,
/// centered on it, at every configured scale. The reported score is the best
/// NCC with negative correlation floored at zero.
#[derive(Debug, Default)]
pub struct NccTracker {
    config: NccTrackerConfig,
    state: Option<NccState>,
}

impl NccTracker {
    pub fn new(config: NccTrackerConfig) -> Self {
        NccTracker { config, state: None }
    }
}

impl Tracker for NccTracker {
    fn init(&mut self, frame: &Path, gt: BBox) -> Result<(), PluginError> {
        gt.validate()?;
        let img = GrayImage::load(frame)?;
        let rect = img
            .pixel_rect(&gt)
            .ok_or_else(|| PluginError::Other(format!("initial box {gt:?} lies outside the frame")))?;
        self.state = Some(NccState { template: Template::new(img.crop(rect)), scaled: HashMap::new(), current: gt });
        Ok(())
    }

    fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError> {
        let state = self.state.as_mut().ok_or(PluginError::NotInitialized)?;
        let img = GrayImage::load(frame)?;
        let integral = Integral::new(&img);
        let prev = state.current;
        let (cx, cy) = prev.center();
        let f = self.config.search_factor;
        let window = BBox::new(cx - prev.w * f / 2.0, cy - prev.h * f / 2.0, prev.w * f, prev.h * f);
        let Some(region) = img.pixel_rect(&window) else {
            return Ok(ScoredBox::new(prev, 0.0));
        };

        // Unit scale first so it wins exact ties.
        let mut scales = self.config.scales.clone();
        scales.sort_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()));

        let mut best: Option<(f64, PixelRect)> = None;
        for s in scales {
            let cw = ((prev.w * s).round() as usize).max(1);
            let ch = ((prev.h * s).round() as usize).max(1);
            let tpl = state.scaled.entry((cw, ch)).or_insert_with(|| state.template.scaled(cw, ch));
            if cw > region.w || ch > region.h {
                continue;
            }
            for y in region.y..=region.y + region.h - ch {
                for x in region.x..=region.x + region.w - cw {
                    let v = ncc_at(&img, &integral, tpl, x, y);
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, PixelRect { x, y, w: cw, h: ch }));
                    }
                }
            }
        }
        let Some((ncc, rect)) = best else {
            return Ok(ScoredBox::new(prev, 0.0));
        };
        // Keep sub-pixel geometry when the match lands exactly on the previous box.
        let bbox = if img.pixel_rect(&prev) == Some(rect) { prev } else { rect.to_bbox() };
        state.current = bbox;
        Ok(ScoredBox::new(bbox, ncc.max(0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDetectorConfig {
    pub scales: Vec<f64>,
    /// Peaks must exceed this NCC.
    pub ncc_threshold: f64,
    /// A peak overlapping an already kept peak above this IoU is dropped.
    pub suppression_iou: f64,
}

impl Default for TemplateDetectorConfig {
    fn default() -> Self {
        TemplateDetectorConfig { scales: vec![0.96, 1.0, 1.04], ncc_threshold: 0.55, suppression_iou: 0.3 }
    }
}

/// Whole-frame multi-scale NCC search for a fixed exemplar patch.
#[derive(Debug)]
pub struct TemplateDetector {
    config: TemplateDetectorConfig,
    templates: Vec<Template>,
}

impl TemplateDetector {
    pub fn new(exemplar: GrayImage, config: TemplateDetectorConfig) -> Self {
        let base = Template::new(exemplar);
        let mut seen = Vec::new();
        let mut templates = Vec::new();
        for &s in &config.scales {
            let w = ((base.width() as f64 * s).round() as usize).max(1);
            let h = ((base.height() as f64 * s).round() as usize).max(1);
            if !seen.contains(&(w, h)) {
                seen.push((w, h));
                templates.push(base.scaled(w, h));
            }
        }
        TemplateDetector { config, templates }
    }

    /// Uses the region `bbox` of the image at `frame` as the exemplar.
    pub fn from_region(frame: &Path, bbox: BBox, config: TemplateDetectorConfig) -> Result<Self, PluginError> {
        bbox.validate()?;
        let img = GrayImage::load(frame)?;
        let rect = img
            .pixel_rect(&bbox)
            .ok_or_else(|| PluginError::Other(format!("exemplar box {bbox:?} lies outside the frame")))?;
        Ok(TemplateDetector::new(img.crop(rect), config))
    }

    pub fn detect_image(&self, img: &GrayImage) -> Vec<ScoredBox> {
        let integral = Integral::new(img);
        let thr = self.config.ncc_threshold;
        let mut peaks: Vec<ScoredBox> = Vec::new();
        for tpl in &self.templates {
            let (tw, th) = (tpl.width(), tpl.height());
            if tw > img.width || th > img.height {
                continue;
            }
            let rows: Vec<Vec<ScoredBox>> = (0..=img.height - th)
                .into_par_iter()
                .map(|y| {
                    (0..=img.width - tw)
                        .filter_map(|x| {
                            let v = ncc_at(img, &integral, tpl, x, y);
                            (v > thr).then(|| ScoredBox::new(BBox::new(x as f64, y as f64, tw as f64, th as f64), v))
                        })
                        .collect()
                })
                .collect();
            peaks.extend(rows.into_iter().flatten());
        }
        suppress(peaks, self.config.suppression_iou)
    }
}

/// Greedy suppression in descending score order; equal scores keep their
/// input order.
pub fn suppress(mut peaks: Vec<ScoredBox>, max_iou: f64) -> Vec<ScoredBox> {
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<ScoredBox> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| iou_unchecked(&k.bbox, &p.bbox) <= max_iou) {
            kept.push(p);
        }
    }
    kept
}

impl Detector for TemplateDetector {
    fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        Ok(self.detect_image(&GrayImage::load(frame)?))
    }
}

/// Reports its init box with score 1.0 on every frame.
#[derive(Debug, Default)]
pub struct EchoTracker {
    init_box: Option<BBox>,
}

impl Tracker for EchoTracker {
    fn init(&mut self, _frame: &Path, gt: BBox) -> Result<(), PluginError> {
        self.init_box = Some(gt.validate()?);
        Ok(())
    }

    fn track(&mut self, _frame: &Path) -> Result<ScoredBox, PluginError> {
        self.init_box.map(|b| ScoredBox::new(b, 1.0)).ok_or(PluginError::NotInitialized)
    }
}

/// Never detects anything.
#[derive(Debug, Default)]
pub struct EmptyDetector;

impl Detector for EmptyDetector {
    fn detect(&mut self, _frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        Ok(Vec::new())
    }
}

/// Plays back a fixed list of outputs, one per `track` call. `init` rewinds.
#[derive(Debug, Clone)]
pub struct ScriptedTracker {
    outputs: Vec<ScoredBox>,
    cursor: Option<usize>,
}

impl ScriptedTracker {
    pub fn new(outputs: Vec<ScoredBox>) -> Self {
        ScriptedTracker { outputs, cursor: None }
    }
}

impl Tracker for ScriptedTracker {
    fn init(&mut self, _frame: &Path, gt: BBox) -> Result<(), PluginError> {
        gt.validate()?;
        self.cursor = Some(0);
        Ok(())
    }

    fn track(&mut self, _frame: &Path) -> Result<ScoredBox, PluginError> {
        let cursor = self.cursor.as_mut().ok_or(PluginError::NotInitialized)?;
        let out = self
            .outputs
            .get(*cursor)
            .copied()
            .ok_or_else(|| PluginError::Other(format!("script exhausted after {cursor} frames")))?;
        *cursor += 1;
        Ok(out)
    }
}

/// Answers from ground truth keyed by frame path: the annotated box with
/// score 1.0, or the last reported box with score 0.0 where the target is
/// absent.
#[derive(Debug, Clone)]
pub struct OracleTracker {
    truth: HashMap<PathBuf, Option<BBox>>,
    last: Option<BBox>,
}

impl OracleTracker {
    pub fn new(truth: HashMap<PathBuf, Option<BBox>>) -> Self {
        OracleTracker { truth, last: None }
    }
}

impl Tracker for OracleTracker {
    fn init(&mut self, _frame: &Path, gt: BBox) -> Result<(), PluginError> {
        self.last = Some(gt.validate()?);
        Ok(())
    }

    fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError> {
        let last = self.last.ok_or(PluginError::NotInitialized)?;
        match self.truth.get(frame) {
            Some(Some(b)) => {
                self.last = Some(*b);
                Ok(ScoredBox::new(*b, 1.0))
            }
            Some(None) => Ok(ScoredBox::new(last, 0.0)),
            None => Err(PluginError::Other(format!("no ground truth for {}", frame.display()))),
        }
    }
}

/// Returns every ground-truth box of the frame with score 1.0.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    truth: HashMap<PathBuf, Vec<BBox>>,
}

impl OracleDetector {
    pub fn new(truth: HashMap<PathBuf, Vec<BBox>>) -> Self {
        OracleDetector { truth }
    }
}

impl Detector for OracleDetector {
    fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        Ok(self.truth.get(frame).map(|bs| bs.iter().map(|b| ScoredBox::new(*b, 1.0)).collect()).unwrap_or_default())
    }
}
