//! Benchmark harness for anti-UAV tracking and detection.
//!
//! * [`geometry`]: boxes, IoU and center errors.
//! * [`dataset`]: canonical dataset layout, ingestion and attribute statistics.
//! * [`metrics`]: success/precision curves, AP/mAP and throughput.
//! * [`plugins`]: tracker and detector traits, reference plug-ins and the
//!   subprocess protocol.
//! * [`fusion`]: detector-fused tracking and threshold sweeps.
//! * [`bench`]: end-to-end runs and the result directory layout.
//! * [`synth`]: seeded synthetic datasets.

pub mod bench;
pub mod dataset;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod plugins;
pub mod synth;

pub use geometry::BBox;
pub use plugins::{Detector, ScoredBox, Tracker};
