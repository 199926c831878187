//! Tracker and detector abstractions.
//!
//! Frames cross every plug-in boundary as file paths. In-process reference
//! implementations live in [`reference`]; external programs are driven over
//! the line-delimited JSON protocol in [`protocol`] and [`process`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError};

pub mod ncc;
pub mod process;
pub mod protocol;
pub mod reference;

pub use process::ExternalPlugin;
pub use reference::{
    EchoTracker, NccTracker, NccTrackerConfig, OracleDetector, OracleTracker, ScriptedTracker, TemplateDetector,
    TemplateDetectorConfig,
};

#[derive(Debug, Error)]
pub enum PluginError {
    #[error(transparent)]
    InvalidBox(#[from] GeometryError),
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("cannot read image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("track called before init")]
    NotInitialized,
    #[error("{0} is not supported by this plug-in")]
    Unsupported(&'static str),
    #[error("protocol error from {plugin}: {msg}{}", fmt_diagnostics(.diagnostics))]
    Protocol { plugin: String, msg: String, diagnostics: String },
    #[error("plug-in {plugin} reported: {msg}")]
    Remote { plugin: String, msg: String },
    #[error("cannot start plug-in `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

fn fmt_diagnostics(d: &str) -> String {
    if d.is_empty() {
        String::new()
    } else {
        format!(" (stderr: {d})")
    }
}

/// A box with a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Self {
        ScoredBox { bbox, score }
    }

    pub fn validate(self) -> Result<Self, PluginError> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(PluginError::InvalidScore(self.score));
        }
        Ok(self)
    }
}

/// A stateful single-object tracker session.
///
/// `init` may be called again on a live session; it replaces all state.
pub trait Tracker: Send {
    fn init(&mut self, frame: &Path, gt: BBox) -> Result<(), PluginError>;
    fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError>;
}

/// A per-frame detector. Results are unsorted and may be empty.
pub trait Detector: Send {
    fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError>;
}

impl<T: Tracker + ?Sized> Tracker for Box<T> {
    fn init(&mut self, frame: &Path, gt: BBox) -> Result<(), PluginError> {
        (**self).init(frame, gt)
    }
    fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError> {
        (**self).track(frame)
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        (**self).detect(frame)
    }
}

/// The highest-scoring detection; the first one wins a tie.
pub fn best_detection(dets: &[ScoredBox]) -> Option<&ScoredBox> {
    dets.iter().fold(None, |best: Option<&ScoredBox>, d| match best {
        Some(b) if b.score >= d.score => Some(b),
        _ => Some(d),
    })
}
