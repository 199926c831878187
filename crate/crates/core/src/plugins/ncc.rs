//! Grayscale images and exact normalized cross-correlation.
//!
//! Window sums are taken from integral images and the cross term is summed
//! in integers, so a window identical to the template scores exactly 1.0.

use std::path::Path;

use crate::geometry::BBox;
use crate::plugins::PluginError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer does not match dimensions");
        GrayImage { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn load(path: &Path) -> Result<Self, PluginError> {
        let img = image::open(path).map_err(|e| PluginError::Image { path: path.to_path_buf(), msg: e.to_string() })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        Ok(GrayImage::new(w as usize, h as usize, luma.into_raw()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PluginError> {
        image::save_buffer(path, &self.data, self.width as u32, self.height as u32, image::ExtendedColorType::L8)
            .map_err(|e| PluginError::Image { path: path.to_path_buf(), msg: e.to_string() })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Copies `patch` with its top-left corner at `(x, y)`, clipping at the
    /// image border.
    pub fn paste(&mut self, patch: &GrayImage, x: i64, y: i64) {
        for py in 0..patch.height {
            for px in 0..patch.width {
                let (tx, ty) = (x + px as i64, y + py as i64);
                if tx >= 0 && ty >= 0 && (tx as usize) < self.width && (ty as usize) < self.height {
                    self.set(tx as usize, ty as usize, patch.get(px, py));
                }
            }
        }
    }

    /// Pixel rectangle of `b` rounded to the grid and clipped to the image.
    pub fn pixel_rect(&self, b: &BBox) -> Option<PixelRect> {
        let x0 = b.x.round().max(0.0) as i64;
        let y0 = b.y.round().max(0.0) as i64;
        let x1 = ((b.x + b.w).round() as i64).min(self.width as i64);
        let y1 = ((b.y + b.h).round() as i64).min(self.height as i64);
        (x1 > x0 && y1 > y0).then(|| PixelRect {
            x: x0 as usize,
            y: y0 as usize,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        })
    }

    pub fn crop(&self, r: PixelRect) -> GrayImage {
        let mut data = Vec::with_capacity(r.w * r.h);
        for y in r.y..r.y + r.h {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.x + r.w]);
        }
        GrayImage::new(r.w, r.h, data)
    }

    /// Nearest-neighbour resample to `w` x `h`.
    pub fn resize_nearest(&self, w: usize, h: usize) -> GrayImage {
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = ((y * self.height * 2 + self.height) / (h * 2)).min(self.height - 1);
            for x in 0..w {
                let sx = ((x * self.width * 2 + self.width) / (w * 2)).min(self.width - 1);
                data.push(self.get(sx, sy));
            }
        }
        GrayImage::new(w, h, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn to_bbox(self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }
}

/// Template with its intensity moments precomputed.
#[derive(Debug, Clone)]
pub struct Template {
    pub image: GrayImage,
    sum: i64,
    /// `n * sum(t^2) - sum(t)^2`
    var_n: i128,
}

impl Template {
    pub fn new(image: GrayImage) -> Self {
        let n = (image.width * image.height) as i128;
        let sum: i64 = image.data.iter().map(|&v| v as i64).sum();
        let sq: i64 = image.data.iter().map(|&v| (v as i64) * (v as i64)).sum();
        let var_n = n * sq as i128 - (sum as i128) * (sum as i128);
        Template { image, sum, var_n }
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn scaled(&self, w: usize, h: usize) -> Template {
        Template::new(self.image.resize_nearest(w, h))
    }
}

/// Summed-area tables of pixel values and squared pixel values.
pub struct Integral {
    width: usize,
    sum: Vec<i64>,
    sq: Vec<i64>,
}

impl Integral {
    pub fn new(img: &GrayImage) -> Self {
        let w1 = img.width + 1;
        let mut sum = vec![0i64; w1 * (img.height + 1)];
        let mut sq = vec![0i64; w1 * (img.height + 1)];
        for y in 0..img.height {
            let (mut rs, mut rq) = (0i64, 0i64);
            for x in 0..img.width {
                let v = img.get(x, y) as i64;
                rs += v;
                rq += v * v;
                sum[(y + 1) * w1 + x + 1] = sum[y * w1 + x + 1] + rs;
                sq[(y + 1) * w1 + x + 1] = sq[y * w1 + x + 1] + rq;
            }
        }
        Integral { width: img.width, sum, sq }
    }

    fn rect(table: &[i64], w1: usize, x: usize, y: usize, w: usize, h: usize) -> i64 {
        table[(y + h) * w1 + x + w] - table[y * w1 + x + w] - table[(y + h) * w1 + x] + table[y * w1 + x]
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> (i64, i64) {
        let w1 = self.width + 1;
        (Self::rect(&self.sum, w1, x, y, w, h), Self::rect(&self.sq, w1, x, y, w, h))
    }
}

/// NCC in `[-1, 1]` between `tpl` and the window of `img` at `(x, y)`.
/// A flat template or flat window scores 0.
pub fn ncc_at(img: &GrayImage, integral: &Integral, tpl: &Template, x: usize, y: usize) -> f64 {
    let (tw, th) = (tpl.width(), tpl.height());
    debug_assert!(x + tw <= img.width && y + th <= img.height);
    let n = (tw * th) as i128;
    let (wsum, wsq) = integral.window(x, y, tw, th);
    let var_w = n * wsq as i128 - (wsum as i128) * (wsum as i128);
    if var_w == 0 || tpl.var_n == 0 {
        return 0.0;
    }
    let mut cross: u64 = 0;
    for ty in 0..th {
        let row = &img.data[(y + ty) * img.width + x..(y + ty) * img.width + x + tw];
        let trow = &tpl.image.data[ty * tw..(ty + 1) * tw];
        cross += row.iter().zip(trow).map(|(&a, &b)| a as u32 * b as u32).sum::<u32>() as u64;
    }
    let cov = n * cross as i128 - (tpl.sum as i128) * (wsum as i128);
    // Exact +-1 when the window is an affine copy of the template.
    if cov * cov == tpl.var_n * var_w {
        return if cov > 0 { 1.0 } else { -1.0 };
    }
    (cov as f64 / ((tpl.var_n as f64) * (var_w as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Every placement of `tpl` fully inside the rectangle `region` of `img`,
/// in row-major order, with its NCC.
pub fn ncc_scan(img: &GrayImage, integral: &Integral, tpl: &Template, region: PixelRect) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    if tpl.width() > region.w || tpl.height() > region.h {
        return out;
    }
    for y in region.y..=region.y + region.h - tpl.height() {
        for x in region.x..=region.x + region.w - tpl.width() {
            out.push((x, y, ncc_at(img, integral, tpl, x, y)));
        }
    }
    out
}
