//! Axis-aligned box arithmetic.
//!
//! Boxes are `(x, y, w, h)` in pixel units with a top-left origin and `y`
//! growing downward. Intersections use half-open intervals, so two boxes
//! that only share an edge do not overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box {0:?}: width and height must be positive and finite")]
    InvalidBox(BBox),
}

/// Axis-aligned rectangle in pixel coordinates.
///
/// Serialized as the four-element array `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// A box that can stand for a present target: finite coordinates and
    /// strictly positive extent.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn validate(self) -> Result<Self, GeometryError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(GeometryError::InvalidBox(self))
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Area of the overlap with `other`; zero when the boxes are disjoint or
    /// merely touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// [`iou`] without validation, for hot loops over boxes already known to be
/// valid.
pub fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance in pixels between the centers of `pred` and `gt`.
pub fn center_error(pred: &BBox, gt: &BBox) -> Result<f64, GeometryError> {
    pred.validate()?;
    gt.validate()?;
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    Ok((px - gx).hypot(py - gy))
}

/// Center offset divided component-wise by the ground-truth width and
/// height, then taken as an L2 norm.
pub fn normalized_center_error(pred: &BBox, gt: &BBox) -> Result<f64, GeometryError> {
    pred.validate()?;
    gt.validate()?;
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    Ok(((px - gx) / gt.w).hypot((py - gy) / gt.h))
}
