//! Dataset model, ingestion and attribute statistics.
//!
//! Canonical on-disk layout under a dataset root:
//!
//! ```text
//! detection/{train,test,val}/annotations.jsonl
//!     one JSON record per line:
//!     {"image":"images/0001.jpg","height":H,"width":W,"objects":[[x,y,w,h],...]}
//!     relative image paths resolve against the split directory
//! tracking/<sequence>/groundtruth.txt
//!     line k describes frame k: "x,y,w,h" or the token "absent"
//! tracking/<sequence>/frames.txt      (optional) one image path per frame
//! tracking/<sequence>/img/            otherwise: frames in file-name order
//! ```
//!
//! Image dimensions always come from the image files; a disagreeing
//! `height`/`width` in a detection record only produces a warning.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "jpeg", "png", "bmp", "tif", "tiff"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing split: {0}")]
    MissingSplit(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {frames} frames but {annotations} annotations")]
    CountMismatch { path: PathBuf, frames: usize, annotations: usize },
    #[error("{path}:{line}: image {image} does not exist")]
    MissingImage { path: PathBuf, line: usize, image: PathBuf },
    #[error("cannot read image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    DetectionTrain,
    DetectionTest,
    DetectionVal,
    Tracking,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::DetectionTrain, Split::DetectionTest, Split::DetectionVal, Split::Tracking];

    pub fn is_detection(self) -> bool {
        self != Split::Tracking
    }

    /// Directory of the split relative to the dataset root.
    pub fn relative_dir(self) -> PathBuf {
        match self {
            Split::DetectionTrain => PathBuf::from("detection/train"),
            Split::DetectionTest => PathBuf::from("detection/test"),
            Split::DetectionVal => PathBuf::from("detection/val"),
            Split::Tracking => PathBuf::from("tracking"),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::DetectionTrain => "detection-train",
            Split::DetectionTest => "detection-test",
            Split::DetectionVal => "detection-val",
            Split::Tracking => "tracking",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s {
            "detection-train" | "train" => Ok(Split::DetectionTrain),
            "detection-test" | "test" => Ok(Split::DetectionTest),
            "detection-val" | "val" => Ok(Split::DetectionVal),
            "tracking" => Ok(Split::Tracking),
            other => Err(DatasetError::UnknownSplit(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: u32,
    pub width: u32,
}

impl ImageSize {
    pub fn new(height: u32, width: u32) -> Self {
        ImageSize { height, width }
    }

    pub fn area(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let (w, h) = image::image_dimensions(path)
            .map_err(|e| DatasetError::Image { path: path.to_path_buf(), msg: e.to_string() })?;
        Ok(ImageSize::new(h, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image_path: PathBuf,
    pub image_size: ImageSize,
    pub objects: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: PathBuf,
    pub size: ImageSize,
    pub gt: Option<BBox>,
}

/// A tracking sequence in temporal order. Frame 0 always has ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<Frame>) -> Result<Self, DatasetError> {
        let name = name.into();
        match frames.first() {
            None => Err(DatasetError::InvalidInput(format!("sequence {name} has no frames"))),
            Some(f) if f.gt.is_none() => {
                Err(DatasetError::InvalidInput(format!("sequence {name} has no ground truth on frame 0")))
            }
            Some(_) => Ok(Sequence { name, frames }),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn initial_box(&self) -> Option<BBox> {
        self.frames.first().and_then(|f| f.gt)
    }

    pub fn ground_truth(&self) -> Vec<Option<BBox>> {
        self.frames.iter().map(|f| f.gt).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entries {
    Images(Vec<ImageAnnotation>),
    Sequences(Vec<Sequence>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub split: Split,
    pub entries: Entries,
    /// Non-fatal ingestion findings, e.g. annotated sizes that disagree with
    /// the image files.
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn images(&self) -> &[ImageAnnotation] {
        match &self.entries {
            Entries::Images(v) => v,
            Entries::Sequences(_) => &[],
        }
    }

    pub fn sequences(&self) -> &[Sequence] {
        match &self.entries {
            Entries::Sequences(v) => v,
            Entries::Images(_) => &[],
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.entries {
            Entries::Images(v) => v.is_empty(),
            Entries::Sequences(v) => v.is_empty(),
        }
    }

    /// Every present object with the size of its image and the name of the
    /// entry (image path or sequence) it belongs to.
    pub fn objects(&self) -> Vec<(String, BBox, ImageSize)> {
        match &self.entries {
            Entries::Images(imgs) => imgs
                .iter()
                .flat_map(|a| {
                    let name = a.image_path.display().to_string();
                    a.objects.iter().map(move |b| (name.clone(), *b, a.image_size))
                })
                .collect(),
            Entries::Sequences(seqs) => seqs
                .iter()
                .flat_map(|s| s.frames.iter().filter_map(move |f| f.gt.map(|b| (s.name.clone(), b, f.size))))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    image: PathBuf,
    height: u32,
    width: u32,
    objects: Vec<BBox>,
}

/// Loads and fully validates one split under `root`.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetIndex, DatasetError> {
    let dir = root.join(split.relative_dir());
    if !dir.is_dir() {
        return Err(DatasetError::MissingSplit(dir));
    }
    let mut warnings = Vec::new();
    let entries = if split.is_detection() {
        Entries::Images(load_detection_split(&dir, &mut warnings)?)
    } else {
        Entries::Sequences(load_tracking_split(&dir)?)
    };
    let index = DatasetIndex { split, entries, warnings };
    if index.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    for w in &index.warnings {
        log::warn!("{w}");
    }
    Ok(index)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn is_image_file(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    out.sort();
    Ok(out)
}

fn load_detection_split(dir: &Path, warnings: &mut Vec<String>) -> Result<Vec<ImageAnnotation>, DatasetError> {
    let ann_path = dir.join("annotations.jsonl");
    if !ann_path.is_file() {
        return Err(DatasetError::MissingSplit(ann_path));
    }
    let text = fs::read_to_string(&ann_path).map_err(io_err(&ann_path))?;
    let malformed = |line: usize, msg: String| DatasetError::Malformed { path: ann_path.clone(), line, msg };

    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(raw).map_err(|e| malformed(line, e.to_string()))?;
        if rec.height == 0 || rec.width == 0 {
            return Err(malformed(line, "image size must be positive".into()));
        }
        for b in &rec.objects {
            if !b.is_valid() {
                return Err(malformed(line, format!("invalid box {:?}", <[f64; 4]>::from(*b))));
            }
        }
        let image = resolve(dir, &rec.image);
        if !image.is_file() {
            return Err(DatasetError::MissingImage { path: ann_path.clone(), line, image });
        }
        records.push((line, image, rec));
    }

    let images_dir = dir.join("images");
    if images_dir.is_dir() {
        let on_disk = list_images(&images_dir)?.len();
        if on_disk != records.len() {
            return Err(DatasetError::CountMismatch { path: images_dir, frames: on_disk, annotations: records.len() });
        }
    }

    let sizes: Vec<ImageSize> =
        records.par_iter().map(|(_, image, _)| ImageSize::read(image)).collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(records.len());
    for ((line, image, rec), size) in records.into_iter().zip(sizes) {
        if size != ImageSize::new(rec.height, rec.width) {
            warnings.push(format!(
                "{}:{line}: annotated size {}x{} differs from image {}x{}",
                ann_path.display(),
                rec.height,
                rec.width,
                size.height,
                size.width
            ));
        }
        out.push(ImageAnnotation { image_path: image, image_size: size, objects: rec.objects });
    }
    Ok(out)
}

/// Parses one canonical tracking ground-truth line.
pub fn parse_gt_line(line: &str) -> Result<Option<BBox>, String> {
    let line = line.trim();
    if line == "absent" {
        return Ok(None);
    }
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected \"x,y,w,h\" or \"absent\", got {line:?}"));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
    }
    let b = BBox::from(v);
    if !b.is_valid() {
        return Err(format!("invalid box {line:?}"));
    }
    Ok(Some(b))
}

pub fn format_gt_line(gt: Option<BBox>) -> String {
    match gt {
        None => "absent".to_owned(),
        Some(b) => format!("{},{},{},{}", b.x, b.y, b.w, b.h),
    }
}

fn read_gt_file(path: &Path) -> Result<Vec<Option<BBox>>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines: Vec<&str> = text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse_gt_line(l).map_err(|msg| DatasetError::Malformed { path: path.to_path_buf(), line: i + 1, msg })
        })
        .collect()
}

/// Loads one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<Sequence, DatasetError> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let gt_path = dir.join("groundtruth.txt");
    if !gt_path.is_file() {
        return Err(DatasetError::MissingSplit(gt_path));
    }
    let gts = read_gt_file(&gt_path)?;

    let list = dir.join("frames.txt");
    let images: Vec<PathBuf> = if list.is_file() {
        let text = fs::read_to_string(&list).map_err(io_err(&list))?;
        let mut out = Vec::new();
        for (i, l) in text.lines().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let p = resolve(dir, Path::new(l.trim()));
            if !p.is_file() {
                return Err(DatasetError::MissingImage { path: list.clone(), line: i + 1, image: p });
            }
            out.push(p);
        }
        out
    } else {
        let img_dir = dir.join("img");
        if !img_dir.is_dir() {
            return Err(DatasetError::MissingSplit(img_dir));
        }
        list_images(&img_dir)?
    };

    if images.len() != gts.len() {
        return Err(DatasetError::CountMismatch {
            path: dir.to_path_buf(),
            frames: images.len(),
            annotations: gts.len(),
        });
    }
    if gts.first().is_some_and(Option::is_none) {
        return Err(DatasetError::Malformed {
            path: gt_path,
            line: 1,
            msg: "frame 0 must have a ground-truth box".into(),
        });
    }
    let sizes: Vec<ImageSize> = images.par_iter().map(|p| ImageSize::read(p)).collect::<Result<_, _>>()?;
    let frames = images.into_iter().zip(sizes).zip(gts).map(|((image, size), gt)| Frame { image, size, gt }).collect();
    Sequence::new(name, frames)
}

fn load_tracking_split(dir: &Path) -> Result<Vec<Sequence>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_sequence(d)).collect()
}

/// Writes `index` in canonical form under `root` with absolute image paths,
/// so the copy can be loaded without moving any images.
pub fn write_canonical(index: &DatasetIndex, root: &Path) -> Result<(), DatasetError> {
    let dir = root.join(index.split.relative_dir());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let abs = |p: &Path| fs::canonicalize(p).map_err(io_err(p));
    match &index.entries {
        Entries::Images(imgs) => {
            let path = dir.join("annotations.jsonl");
            let mut f = io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
            for a in imgs {
                let rec = DetectionRecord {
                    image: abs(&a.image_path)?,
                    height: a.image_size.height,
                    width: a.image_size.width,
                    objects: a.objects.clone(),
                };
                let line = serde_json::to_string(&rec).expect("records serialize");
                writeln!(f, "{line}").map_err(io_err(&path))?;
            }
            f.flush().map_err(io_err(&path))?;
        }
        Entries::Sequences(seqs) => {
            for s in seqs {
                let sdir = dir.join(&s.name);
                fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
                let mut gt = String::new();
                let mut frames = String::new();
                for fr in &s.frames {
                    gt.push_str(&format_gt_line(fr.gt));
                    gt.push('\n');
                    frames.push_str(&abs(&fr.image)?.display().to_string());
                    frames.push('\n');
                }
                let p = sdir.join("groundtruth.txt");
                fs::write(&p, gt).map_err(io_err(&p))?;
                let p = sdir.join("frames.txt");
                fs::write(&p, frames).map_err(io_err(&p))?;
            }
        }
    }
    Ok(())
}

/// Object area over full-image area.
pub fn area_ratio(obj: &BBox, size: ImageSize) -> Result<f64, DatasetError> {
    if size.area() == 0 {
        return Err(DatasetError::InvalidInput("image has zero area".into()));
    }
    obj.validate().map_err(|e| DatasetError::InvalidInput(e.to_string()))?;
    Ok(obj.area() / size.area() as f64)
}

/// Orientation-free aspect ratio `max(w, h) / min(w, h)`.
pub fn aspect_ratio(obj: &BBox) -> Result<f64, DatasetError> {
    obj.validate().map_err(|e| DatasetError::InvalidInput(e.to_string()))?;
    Ok(obj.w.max(obj.h) / obj.w.min(obj.h))
}

/// Box center in image-relative coordinates; not clamped to `[0, 1]`.
pub fn relative_center(obj: &BBox, size: ImageSize) -> Result<(f64, f64), DatasetError> {
    if size.width == 0 || size.height == 0 {
        return Err(DatasetError::InvalidInput("image has a zero dimension".into()));
    }
    let (cx, cy) = obj.center();
    Ok((cx / size.width as f64, cy / size.height as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub max: f64,
    pub avg: f64,
    pub min: f64,
}

/// One row of the attribute table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub name: String,
    pub object_count: usize,
    pub image_size_max: ImageSize,
    pub image_size_min: ImageSize,
    pub area_ratio: Triple,
    pub aspect_ratio: Triple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin `i` covers `[edges[i], edges[i + 1])`; the last bin also holds its
    /// upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Self {
        assert!(edges.len() >= 2 && edges.windows(2).all(|w| w[0] < w[1]));
        let counts = vec![0; edges.len() - 1];
        Histogram { edges, counts }
    }

    /// Counts `v` if it falls inside the histogram range.
    pub fn add(&mut self, v: f64) -> bool {
        let n = self.counts.len();
        if v < self.edges[0] || v > self.edges[n] {
            return false;
        }
        // First edge strictly greater than v, minus one.
        let i = self.edges.partition_point(|&e| e <= v).saturating_sub(1).min(n - 1);
        self.counts[i] += 1;
        true
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_low", "bin_high", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Area-ratio bins: 0.0025 wide up to 0.05, then one bin to 1.
pub fn area_ratio_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..=20).map(|i| i as f64 / 400.0).collect();
    e.push(1.0);
    e
}

/// Aspect-ratio bins: 0.25 wide from 1 to 7, then one open-ended bin.
pub fn aspect_ratio_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..=24).map(|i| 1.0 + i as f64 / 4.0).collect();
    e.push(f64::INFINITY);
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub entry: String,
    pub u: f64,
    pub v: f64,
}

/// Attribute table plus the data behind the distribution figures.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub split: Split,
    /// Per-sequence rows (tracking only).
    pub rows: Vec<AttributeReport>,
    pub all: AttributeReport,
    pub area_histogram: Histogram,
    pub aspect_histogram: Histogram,
    pub scatter: Vec<ScatterPoint>,
}

fn aggregate(name: &str, objects: &[(String, BBox, ImageSize)]) -> Result<AttributeReport, DatasetError> {
    let first = objects.first().ok_or(DatasetError::EmptyDataset)?;
    let mut size_max = first.2;
    let mut size_min = first.2;
    let (mut a_sum, mut a_max, mut a_min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    let (mut r_sum, mut r_max, mut r_min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    let size_key = |s: &ImageSize| (s.area(), s.height);
    for (_, b, size) in objects {
        if size_key(size) > size_key(&size_max) {
            size_max = *size;
        }
        if size_key(size) < size_key(&size_min) {
            size_min = *size;
        }
        let a = area_ratio(b, *size)?;
        a_sum += a;
        a_max = a_max.max(a);
        a_min = a_min.min(a);
        let r = aspect_ratio(b)?;
        r_sum += r;
        r_max = r_max.max(r);
        r_min = r_min.min(r);
    }
    let n = objects.len() as f64;
    Ok(AttributeReport {
        name: name.to_owned(),
        object_count: objects.len(),
        image_size_max: size_max,
        image_size_min: size_min,
        area_ratio: Triple { max: a_max, avg: a_sum / n, min: a_min },
        aspect_ratio: Triple { max: r_max, avg: r_sum / n, min: r_min },
    })
}

/// Aggregates object statistics over a split: one row per sequence for
/// tracking, an `All` row, histograms and relative-center scatter data.
/// Averages are per-object arithmetic means.
pub fn attribute_report(index: &DatasetIndex) -> Result<DatasetReport, DatasetError> {
    let objects = index.objects();
    if objects.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let all = aggregate("All", &objects)?;

    let mut rows = Vec::new();
    if let Entries::Sequences(seqs) = &index.entries {
        let mut by_seq: BTreeMap<&str, Vec<(String, BBox, ImageSize)>> = BTreeMap::new();
        for o in &objects {
            by_seq.entry(o.0.as_str()).or_default().push(o.clone());
        }
        for s in seqs {
            if let Some(objs) = by_seq.get(s.name.as_str()) {
                rows.push(aggregate(&s.name, objs)?);
            }
        }
    }

    let mut area_histogram = Histogram::new(area_ratio_edges());
    let mut aspect_histogram = Histogram::new(aspect_ratio_edges());
    let mut scatter = Vec::with_capacity(objects.len());
    for (entry, b, size) in &objects {
        area_histogram.add(area_ratio(b, *size)?);
        aspect_histogram.add(aspect_ratio(b)?);
        let (u, v) = relative_center(b, *size)?;
        scatter.push(ScatterPoint { entry: entry.clone(), u, v });
    }
    Ok(DatasetReport { split: index.split, rows, all, area_histogram, aspect_histogram, scatter })
}

const REPORT_HEADER: [&str; 12] = [
    "name",
    "object_count",
    "image_max_h",
    "image_max_w",
    "image_min_h",
    "image_min_w",
    "area_ratio_max",
    "area_ratio_avg",
    "area_ratio_min",
    "aspect_ratio_max",
    "aspect_ratio_avg",
    "aspect_ratio_min",
];

impl DatasetReport {
    /// Writes `report.csv`, `area_histogram.csv`, `aspect_histogram.csv`
    /// and `scatter.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(REPORT_HEADER)?;
        for r in self.rows.iter().chain(std::iter::once(&self.all)) {
            w.write_record([
                r.name.clone(),
                r.object_count.to_string(),
                r.image_size_max.height.to_string(),
                r.image_size_max.width.to_string(),
                r.image_size_min.height.to_string(),
                r.image_size_min.width.to_string(),
                r.area_ratio.max.to_string(),
                r.area_ratio.avg.to_string(),
                r.area_ratio.min.to_string(),
                r.aspect_ratio.max.to_string(),
                r.aspect_ratio.avg.to_string(),
                r.aspect_ratio.min.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;

        self.area_histogram.write_csv(&dir.join("area_histogram.csv"))?;
        self.aspect_histogram.write_csv(&dir.join("aspect_histogram.csv"))?;

        let path = dir.join("scatter.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["entry", "u", "v"])?;
        for p in &self.scatter {
            w.write_record([p.entry.clone(), p.u.to_string(), p.v.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;
        Ok(())
    }
}

/// Reads the rows of a `report.csv`; the `All` row is last.
pub fn read_report_csv(path: &Path) -> Result<Vec<AttributeReport>, DatasetError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(DatasetError::Malformed { path: path.to_path_buf(), line: 1, msg: "unexpected header".into() });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |j: usize| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: i + 2,
            msg: format!("bad {}", REPORT_HEADER[j]),
        };
        let f = |j: usize| rec.get(j).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(j));
        let u = |j: usize| rec.get(j).and_then(|s| s.parse::<u32>().ok()).ok_or_else(|| bad(j));
        out.push(AttributeReport {
            name: rec.get(0).unwrap_or_default().to_owned(),
            object_count: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(1))?,
            image_size_max: ImageSize::new(u(2)?, u(3)?),
            image_size_min: ImageSize::new(u(4)?, u(5)?),
            area_ratio: Triple { max: f(6)?, avg: f(7)?, min: f(8)? },
            aspect_ratio: Triple { max: f(9)?, avg: f(10)?, min: f(11)? },
        });
    }
    Ok(out)
}

/// Parses third-party tracking ground truth: comma, tab or space separated
/// `x y w h`, where `nan` values or a non-positive size mark the target
/// absent. Output is in canonical form.
pub fn import_tracking_gt(reader: impl BufRead, source: &Path) -> Result<Vec<Option<BBox>>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(source))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let vals: Vec<f64> = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::Malformed { path: source.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        if vals.len() != 4 {
            return Err(DatasetError::Malformed {
                path: source.to_path_buf(),
                line: i + 1,
                msg: format!("expected 4 values, got {}", vals.len()),
            });
        }
        let b = BBox::new(vals[0], vals[1], vals[2], vals[3]);
        out.push(b.is_valid().then_some(b));
    }
    Ok(out)
}

/// Extracts object boxes from a Pascal-VOC style XML annotation
/// (`<bndbox><xmin>..</xmin>...`). Corners are taken as continuous
/// coordinates: `w = xmax - xmin`.
pub fn import_voc_objects(xml: &str, source: &Path) -> Result<Vec<BBox>, DatasetError> {
    fn tag<'a>(s: &'a str, name: &str) -> Option<&'a str> {
        let open = format!("<{name}>");
        let close = format!("</{name}>");
        let a = s.find(&open)? + open.len();
        let b = a + s[a..].find(&close)?;
        Some(s[a..b].trim())
    }
    let mut out = Vec::new();
    let mut rest = xml;
    while let Some(pos) = rest.find("<bndbox>") {
        let end = rest[pos..].find("</bndbox>").map(|e| pos + e).ok_or_else(|| DatasetError::Malformed {
            path: source.to_path_buf(),
            line: 0,
            msg: "unterminated <bndbox>".into(),
        })?;
        let body = &rest[pos..end];
        let num = |n: &str| -> Result<f64, DatasetError> {
            tag(body, n).and_then(|v| v.parse().ok()).ok_or_else(|| DatasetError::Malformed {
                path: source.to_path_buf(),
                line: 0,
                msg: format!("missing or bad <{n}>"),
            })
        };
        let (x0, y0, x1, y1) = (num("xmin")?, num("ymin")?, num("xmax")?, num("ymax")?);
        let b = BBox::new(x0, y0, x1 - x0, y1 - y0);
        if !b.is_valid() {
            return Err(DatasetError::Malformed {
                path: source.to_path_buf(),
                line: 0,
                msg: format!("degenerate box {b:?}"),
            });
        }
        out.push(b);
        rest = &rest[end..];
    }
    Ok(out)
}
