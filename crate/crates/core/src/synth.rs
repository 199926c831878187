//! Seeded synthetic datasets in the canonical layout.
//!
//! Frames are uniform noise with one or more copies of a noise template
//! pasted at integer positions, so NCC matches are exact and ground truth is
//! known to the pixel.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{format_gt_line, DatasetError, Frame, ImageSize, Sequence, Split};
use crate::geometry::BBox;
use crate::plugins::ncc::GrayImage;
use crate::plugins::{PluginError, ScoredBox};

fn image_err(e: PluginError) -> DatasetError {
    match e {
        PluginError::Image { path, msg } => DatasetError::Image { path, msg },
        other => DatasetError::InvalidInput(other.to_string()),
    }
}

fn mkdir(p: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(p).map_err(|source| DatasetError::Io { path: p.to_path_buf(), source })
}

fn write(p: &Path, text: String) -> Result<(), DatasetError> {
    fs::write(p, text).map_err(|source| DatasetError::Io { path: p.to_path_buf(), source })
}

pub fn noise_image(rng: &mut impl Rng, width: usize, height: usize) -> GrayImage {
    let mut data = vec![0u8; width * height];
    rng.fill(&mut data[..]);
    GrayImage::new(width, height, data)
}

/// Position of a target bouncing inside `[0, span]` with speed `v`.
fn bounce(start: i64, v: i64, t: i64, span: i64) -> i64 {
    if span <= 0 {
        return 0;
    }
    let p = (start + v * t).rem_euclid(2 * span);
    if p <= span {
        p
    } else {
        2 * span - p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingSynthConfig {
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub target_width: usize,
    pub target_height: usize,
    /// Every `absent_every`-th frame (never frame 0) has no target; 0 disables.
    pub absent_every: usize,
}

impl Default for TrackingSynthConfig {
    fn default() -> Self {
        TrackingSynthConfig {
            seed: 0,
            sequences: 3,
            frames: 30,
            width: 128,
            height: 96,
            target_width: 16,
            target_height: 10,
            absent_every: 0,
        }
    }
}

/// Writes `tracking/seqNN/{img/*.png,groundtruth.txt}` under `root`.
pub fn synth_tracking(root: &Path, cfg: &TrackingSynthConfig) -> Result<Vec<Sequence>, DatasetError> {
    if cfg.frames == 0 || cfg.target_width == 0 || cfg.target_height == 0 {
        return Err(DatasetError::InvalidInput("frames and target size must be positive".into()));
    }
    if cfg.target_width > cfg.width || cfg.target_height > cfg.height {
        return Err(DatasetError::InvalidInput("target larger than frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for s in 0..cfg.sequences {
        let name = format!("seq{:02}", s + 1);
        let dir = root.join(Split::Tracking.relative_dir()).join(&name);
        mkdir(&dir.join("img"))?;
        let template = noise_image(&mut rng, cfg.target_width, cfg.target_height);
        let span_x = (cfg.width - cfg.target_width) as i64;
        let span_y = (cfg.height - cfg.target_height) as i64;
        let (x0, y0) = (rng.gen_range(0..=span_x), rng.gen_range(0..=span_y));
        let (vx, vy) = (rng.gen_range(-2..=2i64), rng.gen_range(-2..=2i64));
        let mut frames = Vec::new();
        let mut gt_text = String::new();
        for t in 0..cfg.frames {
            let mut img = noise_image(&mut rng, cfg.width, cfg.height);
            let absent = cfg.absent_every > 0 && t > 0 && t % cfg.absent_every == 0;
            let gt = (!absent).then(|| {
                let x = bounce(x0, vx, t as i64, span_x);
                let y = bounce(y0, vy, t as i64, span_y);
                img.paste(&template, x, y);
                BBox::new(x as f64, y as f64, cfg.target_width as f64, cfg.target_height as f64)
            });
            let path = dir.join("img").join(format!("{:04}.png", t + 1));
            img.save_png(&path).map_err(image_err)?;
            gt_text.push_str(&format_gt_line(gt));
            gt_text.push('\n');
            frames.push(Frame { image: path, size: ImageSize::new(cfg.height as u32, cfg.width as u32), gt });
        }
        write(&dir.join("groundtruth.txt"), gt_text)?;
        out.push(Sequence::new(name, frames)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSynthConfig {
    pub seed: u64,
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub target_width: usize,
    pub target_height: usize,
    pub max_objects: usize,
}

impl Default for DetectionSynthConfig {
    fn default() -> Self {
        DetectionSynthConfig {
            seed: 0,
            images: 8,
            width: 128,
            height: 96,
            target_width: 16,
            target_height: 10,
            max_objects: 2,
        }
    }
}

/// Writes a detection split with up to `max_objects` non-overlapping copies
/// of one template per image. The template is saved as `exemplar.png` in the
/// split directory; its path is returned.
pub fn synth_detection(root: &Path, split: Split, cfg: &DetectionSynthConfig) -> Result<PathBuf, DatasetError> {
    if !split.is_detection() {
        return Err(DatasetError::InvalidInput(format!("{split} is not a detection split")));
    }
    if cfg.target_width == 0 || cfg.target_height == 0 || cfg.target_width > cfg.width || cfg.target_height > cfg.height
    {
        return Err(DatasetError::InvalidInput("bad target size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dir = root.join(split.relative_dir());
    mkdir(&dir.join("images"))?;
    let template = noise_image(&mut rng, cfg.target_width, cfg.target_height);
    let exemplar = dir.join("exemplar.png");
    template.save_png(&exemplar).map_err(image_err)?;

    let mut lines = String::new();
    for i in 0..cfg.images {
        let mut img = noise_image(&mut rng, cfg.width, cfg.height);
        let wanted = rng.gen_range(0..=cfg.max_objects);
        let mut objects: Vec<BBox> = Vec::new();
        for _ in 0..wanted * 20 {
            if objects.len() == wanted {
                break;
            }
            let x = rng.gen_range(0..=cfg.width - cfg.target_width);
            let y = rng.gen_range(0..=cfg.height - cfg.target_height);
            let b = BBox::new(x as f64, y as f64, cfg.target_width as f64, cfg.target_height as f64);
            // Keep a one-pixel gap so copies never touch.
            let grown = BBox::new(b.x - 1.0, b.y - 1.0, b.w + 2.0, b.h + 2.0);
            if objects.iter().all(|o| o.intersection_area(&grown) == 0.0) {
                img.paste(&template, x as i64, y as i64);
                objects.push(b);
            }
        }
        let rel = format!("images/{:04}.png", i + 1);
        img.save_png(&dir.join(&rel)).map_err(image_err)?;
        let rec = serde_json::json!({
            "image": rel,
            "height": cfg.height,
            "width": cfg.width,
            "objects": objects,
        });
        lines.push_str(&rec.to_string());
        lines.push('\n');
    }
    write(&dir.join("annotations.jsonl"), lines)?;
    Ok(exemplar)
}

/// A sequence on which a tracker drifts halfway through and a template
/// detector can recover the target.
#[derive(Debug, Clone)]
pub struct DriftFixture {
    pub sequence: Sequence,
    /// Output script for frames `1..N`: ground truth with score 0.95 before
    /// `drift_from`, a box far from the target with score 0.3 afterwards.
    pub tracker_script: Vec<ScoredBox>,
    pub drift_from: usize,
}

pub const DRIFT_FRAMES: usize = 100;
pub const DRIFT_FROM: usize = 50;

/// Writes the drift fixture as `tracking/drift` under `root`.
pub fn drift_fixture(root: &Path, seed: u64) -> Result<DriftFixture, DatasetError> {
    let (w, h, tw, th) = (160usize, 120usize, 20usize, 14usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = root.join(Split::Tracking.relative_dir()).join("drift");
    mkdir(&dir.join("img"))?;
    let template = noise_image(&mut rng, tw, th);
    let (span_x, span_y) = ((w - tw) as i64, (h - th) as i64);
    let mut frames = Vec::with_capacity(DRIFT_FRAMES);
    let mut script = Vec::with_capacity(DRIFT_FRAMES - 1);
    let mut gt_text = String::new();
    for t in 0..DRIFT_FRAMES {
        let mut img = noise_image(&mut rng, w, h);
        let x = bounce(30, 3, t as i64, span_x);
        let y = bounce(20, 2, t as i64, span_y);
        img.paste(&template, x, y);
        let gt = BBox::new(x as f64, y as f64, tw as f64, th as f64);
        let path = dir.join("img").join(format!("{:04}.png", t + 1));
        img.save_png(&path).map_err(image_err)?;
        gt_text.push_str(&format_gt_line(Some(gt)));
        gt_text.push('\n');
        frames.push(Frame { image: path, size: ImageSize::new(h as u32, w as u32), gt: Some(gt) });
        if t > 0 {
            script.push(if t < DRIFT_FROM {
                ScoredBox::new(gt, 0.95)
            } else {
                // Mirror through the frame center, then push clear of the target.
                let far = BBox::new(
                    if gt.x < (w / 2) as f64 { (w - tw) as f64 } else { 0.0 },
                    if gt.y < (h / 2) as f64 { (h - th) as f64 } else { 0.0 },
                    tw as f64,
                    th as f64,
                );
                ScoredBox::new(far, 0.3)
            });
        }
    }
    write(&dir.join("groundtruth.txt"), gt_text)?;
    Ok(DriftFixture { sequence: Sequence::new("drift", frames)?, tracker_script: script, drift_from: DRIFT_FROM })
}
