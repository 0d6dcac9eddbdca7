//! RGB rasters, bilinear resampling, perspective warps and patch compositing.
//!
//! Pixel `(i, j)` has its center at continuous coordinate `(i, j)`; column `i`
//! runs along x and row `j` along y.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Homography, Point2};

pub type Rgb = [f64; 3];

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("channel value {value} at index {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("invalid bounding box ({xmin}, {ymin}, {xmax}, {ymax})")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("invalid patch placement: {0}")]
    InvalidPlacement(String),
    #[error("patch placement does not intersect the frame")]
    EmptyIntersection,
    #[error("degenerate projected quad: {0}")]
    DegenerateQuad(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major interleaved RGB raster with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        check_range(rgb.iter().copied())?;
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(ImagingError::BufferLength {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        check_range(data.iter().copied())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel function; values are clamped into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Rgb,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                if px.iter().any(|v| v.is_nan()) {
                    return Err(ImagingError::ValueOutOfRange {
                        index: (y * width + x) * 3,
                        value: f64::NAN,
                    });
                }
                data.extend(px.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: Rgb) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Applies `f` to every channel value and clamps the result into `[0, 1]`.
    pub fn map_values(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i, *v).clamp(0.0, 1.0);
        }
    }

    /// Mean of the three channels per pixel.
    pub fn gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), ImagingError> {
    if width == 0 || height == 0 {
        return Err(ImagingError::InvalidDimensions { width, height });
    }
    Ok(())
}

fn check_range(values: impl Iterator<Item = f64>) -> Result<(), ImagingError> {
    for (index, value) in values.enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(ImagingError::ValueOutOfRange { index, value });
        }
    }
    Ok(())
}

/// Converts an 8-bit channel to `[0, 1]`.
pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Converts a `[0, 1]` channel to 8 bits with rounding.
pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit PNG as RGB; any alpha channel is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageBuffer, ImagingError> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(from_u8).collect();
    ImageBuffer::from_raw(w as usize, h as usize, data)
}

pub fn write_png(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let out = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Per-channel partial derivatives of a scalar with respect to an image's values.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GradientRaster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn zeros_like(img: &ImageBuffer) -> Self {
        Self::zeros(img.width, img.height)
    }

    pub fn shape_matches(&self, img: &ImageBuffer) -> bool {
        self.width == img.width && self.height == img.height
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientRaster, scale: f64) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= scale);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-pixel coverage in `[0, 1]` of a warped raster.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMask {
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<f64>,
}

impl AlphaMask {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.coverage[y * self.width + x]
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, ImagingError> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(ImagingError::InvalidBox {
                xmin,
                ymin,
                xmax,
                ymax,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmin < self.xmax
            && self.ymin < self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Axis-aligned hull of a set of points.
    pub fn hull(points: &[Point2]) -> Result<Self, ImagingError> {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            xmin = xmin.min(p.x);
            ymin = ymin.min(p.y);
            xmax = xmax.max(p.x);
            ymax = ymax.max(p.y);
        }
        Self::new(xmin, ymin, xmax, ymax)
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.xmin, self.ymin),
            Point2::new(self.xmax, self.ymin),
            Point2::new(self.xmax, self.ymax),
            Point2::new(self.xmin, self.ymax),
        ]
    }
}

/// Where and how large a patch is composited inside a person box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPlacement {
    pub bbox: BBox,
    /// Patch width as a fraction of the box width.
    pub scale: f64,
    /// Patch center, relative to the box (0 = left/top, 1 = right/bottom).
    pub anchor: (f64, f64),
}

pub const DEFAULT_PLACEMENT_SCALE: f64 = 0.5;
pub const DEFAULT_ANCHOR: (f64, f64) = (0.5, 0.5);

impl PatchPlacement {
    pub fn new(bbox: BBox, scale: f64, anchor: (f64, f64)) -> Result<Self, ImagingError> {
        if !bbox.is_valid() {
            return Err(ImagingError::InvalidPlacement(format!(
                "invalid box {bbox:?}"
            )));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(ImagingError::InvalidPlacement(format!(
                "scale {scale} outside (0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&anchor.0) || !(0.0..=1.0).contains(&anchor.1) {
            return Err(ImagingError::InvalidPlacement(format!(
                "anchor {anchor:?} outside [0, 1]²"
            )));
        }
        Ok(Self {
            bbox,
            scale,
            anchor,
        })
    }

    pub fn centered(bbox: BBox) -> Self {
        Self {
            bbox,
            scale: DEFAULT_PLACEMENT_SCALE,
            anchor: DEFAULT_ANCHOR,
        }
    }
}

/// Geometry of one composited patch, recorded so gradients can be routed back
/// to patch pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementRecord {
    pub patch_width: usize,
    pub patch_height: usize,
    /// Unclipped patch rectangle in frame coordinates.
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// First and one-past-last frame column/row written.
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

impl PlacementRecord {
    /// Covered rectangle as a clockwise quad, clipped to the written pixels' extent.
    pub fn quad(&self) -> [Point2; 4] {
        let xa = self.x0.max(self.cols.0 as f64);
        let ya = self.y0.max(self.rows.0 as f64);
        let xb = self.x1.min(self.cols.1 as f64);
        let yb = self.y1.min(self.rows.1 as f64);
        [
            Point2::new(xa, ya),
            Point2::new(xb, ya),
            Point2::new(xb, yb),
            Point2::new(xa, yb),
        ]
    }

    /// Bilinear taps along x for frame column `i`.
    #[inline]
    pub fn col_taps(&self, i: usize) -> Taps {
        let s = self.patch_width as f64 / (self.x1 - self.x0);
        let u = (i as f64 - self.x0 + 0.5) * s - 0.5;
        Taps::new(
            u.clamp(0.0, (self.patch_width - 1) as f64),
            self.patch_width,
        )
    }

    #[inline]
    pub fn row_taps(&self, j: usize) -> Taps {
        let s = self.patch_height as f64 / (self.y1 - self.y0);
        let v = (j as f64 - self.y0 + 0.5) * s - 0.5;
        Taps::new(
            v.clamp(0.0, (self.patch_height - 1) as f64),
            self.patch_height,
        )
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.cols.0..self.cols.1).contains(&x) && (self.rows.0..self.rows.1).contains(&y)
    }
}

/// Two neighboring sample indices and the weight of the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

impl Taps {
    /// `pos` must lie in `[0, len - 1]`.
    #[inline]
    pub fn new(pos: f64, len: usize) -> Self {
        if len == 1 {
            return Self {
                lo: 0,
                hi: 0,
                frac: 0.0,
            };
        }
        let lo = (pos.floor() as usize).min(len - 2);
        Self {
            lo,
            hi: lo + 1,
            frac: pos - lo as f64,
        }
    }
}

#[inline]
fn lerp_pixel(img: &ImageBuffer, tx: Taps, ty: Taps) -> Rgb {
    let p00 = img.get(tx.lo, ty.lo);
    let p10 = img.get(tx.hi, ty.lo);
    let p01 = img.get(tx.lo, ty.hi);
    let p11 = img.get(tx.hi, ty.hi);
    let (fx, fy) = (tx.frac, ty.frac);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = (1.0 - fx) * p00[c] + fx * p10[c];
        let bottom = (1.0 - fx) * p01[c] + fx * p11[c];
        out[c] = ((1.0 - fy) * top + fy * bottom).clamp(0.0, 1.0);
    }
    out
}

/// Bilinear interpolation of the four pixels around `(x, y)`; `None` when the
/// point lies outside `[0, width-1] × [0, height-1]`.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64) -> Option<Rgb> {
    if !(x >= 0.0 && y >= 0.0 && x <= (img.width - 1) as f64 && y <= (img.height - 1) as f64) {
        return None;
    }
    Some(lerp_pixel(
        img,
        Taps::new(x, img.width),
        Taps::new(y, img.height),
    ))
}

/// Inverse-mapped perspective warp of `src` into an `out_w × out_h` raster.
///
/// Destination pixels whose preimage falls outside `src` are left black with
/// zero coverage.
pub fn warp_image(
    src: &ImageBuffer,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<(ImageBuffer, AlphaMask), ImagingError> {
    check_dims(out_w, out_h)?;
    let inv = h.invert()?;
    let mut data = vec![0.0; out_w * out_h * 3];
    let mut coverage = vec![0.0; out_w * out_h];
    data.par_chunks_mut(out_w * 3)
        .zip(coverage.par_chunks_mut(out_w))
        .enumerate()
        .for_each(|(y, (row, cov))| {
            for x in 0..out_w {
                let Ok(s) = inv.apply(Point2::new(x as f64, y as f64)) else {
                    continue;
                };
                if let Some(px) = bilinear_sample(src, s.x, s.y) {
                    row[x * 3..x * 3 + 3].copy_from_slice(&px);
                    cov[x] = 1.0;
                }
            }
        });
    Ok((
        ImageBuffer {
            width: out_w,
            height: out_h,
            data,
        },
        AlphaMask {
            width: out_w,
            height: out_h,
            coverage,
        },
    ))
}

/// Computes where `placement` puts a `patch_w × patch_h` patch inside a
/// `frame_w × frame_h` frame.
pub fn placement_geometry(
    frame_w: usize,
    frame_h: usize,
    patch_w: usize,
    patch_h: usize,
    placement: &PatchPlacement,
) -> Result<PlacementRecord, ImagingError> {
    let PatchPlacement {
        bbox,
        scale,
        anchor,
    } = *placement;
    PatchPlacement::new(bbox, scale, anchor)?;
    let pw = scale * bbox.width();
    let ph = pw * patch_h as f64 / patch_w as f64;
    let cx = bbox.xmin + anchor.0 * bbox.width();
    let cy = bbox.ymin + anchor.1 * bbox.height();
    let (x0, x1) = (cx - pw / 2.0, cx + pw / 2.0);
    let (y0, y1) = (cy - ph / 2.0, cy + ph / 2.0);

    // Pixel centers c with x0 <= c < x1, clipped to the frame.
    let span = |lo: f64, hi: f64, len: usize| -> (usize, usize) {
        let a = lo.ceil().max(0.0);
        let b = hi.ceil().min(len as f64);
        if b <= a {
            (0, 0)
        } else {
            (a as usize, b as usize)
        }
    };
    let cols = span(x0, x1, frame_w);
    let rows = span(y0, y1, frame_h);
    if cols.0 == cols.1 || rows.0 == rows.1 {
        return Err(ImagingError::EmptyIntersection);
    }
    Ok(PlacementRecord {
        patch_width: patch_w,
        patch_height: patch_h,
        x0,
        y0,
        x1,
        y1,
        cols,
        rows,
    })
}

fn composite(frame: &mut ImageBuffer, patch: &ImageBuffer, rec: &PlacementRecord) {
    let col_taps: Vec<Taps> = (rec.cols.0..rec.cols.1).map(|i| rec.col_taps(i)).collect();
    for j in rec.rows.0..rec.rows.1 {
        let ty = rec.row_taps(j);
        for (k, i) in (rec.cols.0..rec.cols.1).enumerate() {
            let px = lerp_pixel(patch, col_taps[k], ty);
            frame.set(i, j, px);
        }
    }
}

/// Overwrites the frame with the (bilinearly resized) patch at `placement`.
///
/// Returns the composited frame and the quad of frame area actually covered.
pub fn place_patch(
    frame: &ImageBuffer,
    patch: &ImageBuffer,
    placement: &PatchPlacement,
) -> Result<(ImageBuffer, [Point2; 4]), ImagingError> {
    let rec = placement_geometry(
        frame.width,
        frame.height,
        patch.width,
        patch.height,
        placement,
    )?;
    let mut out = frame.clone();
    composite(&mut out, patch, &rec);
    Ok((out, rec.quad()))
}

/// A frame carrying one or more composited patches.
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: ImageBuffer,
    /// In compositing order; later records overwrite earlier ones where they overlap.
    pub records: Vec<PlacementRecord>,
}

/// Composites the patch at every placement, in order. Placements that miss the
/// frame entirely are skipped.
pub fn place_patches(
    frame: &ImageBuffer,
    patch: &ImageBuffer,
    placements: &[PatchPlacement],
) -> Result<Composite, ImagingError> {
    let mut image = frame.clone();
    let mut records = Vec::with_capacity(placements.len());
    for p in placements {
        match placement_geometry(frame.width, frame.height, patch.width, patch.height, p) {
            Ok(rec) => {
                composite(&mut image, patch, &rec);
                records.push(rec);
            }
            Err(ImagingError::EmptyIntersection) => {
                log::debug!("patch placement {:?} misses the frame, skipped", p.bbox);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Composite { image, records })
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn quad_area(q: &[Point2; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

/// Checks that the quad is convex with consistent winding and non-trivial area,
/// returning the winding sign.
fn validate_quad(q: &[Point2; 4]) -> Result<f64, ImagingError> {
    let area = quad_area(q);
    if !(area.abs() >= 1.0) {
        return Err(ImagingError::DegenerateQuad(format!(
            "area {:.3} px² below 1",
            area.abs()
        )));
    }
    let sign = area.signum();
    for i in 0..4 {
        if cross(q[i], q[(i + 1) % 4], q[(i + 2) % 4]) * sign < 0.0 {
            return Err(ImagingError::DegenerateQuad(
                "quad is self-intersecting or non-convex".into(),
            ));
        }
    }
    Ok(sign)
}

fn inside_quad(q: &[Point2; 4], sign: f64, p: Point2) -> bool {
    (0..4).all(|i| cross(q[i], q[(i + 1) % 4], p) * sign >= 0.0)
}

/// Maps a reference-view quad into the destination view.
pub fn project_quad(quad: &[Point2; 4], h: &Homography) -> Result<[Point2; 4], ImagingError> {
    let w0 = h.denominator(quad[0]);
    let mut out = [Point2::new(0.0, 0.0); 4];
    for (o, p) in out.iter_mut().zip(quad) {
        if h.denominator(*p) * w0 <= 0.0 {
            return Err(ImagingError::DegenerateQuad(
                "quad straddles the line at infinity".into(),
            ));
        }
        *o = h.apply(*p)?;
    }
    Ok(out)
}

/// Replaces the pixels of `dst_frame` inside the projection of `patch_quad`
/// with content inverse-mapped from `ref_frame_with_patch`.
pub fn project_patch(
    dst_frame: &ImageBuffer,
    ref_frame_with_patch: &ImageBuffer,
    patch_quad: &[Point2; 4],
    h_ref_to_dst: &Homography,
) -> Result<ImageBuffer, ImagingError> {
    let inv = h_ref_to_dst.invert()?;
    let q = project_quad(patch_quad, h_ref_to_dst)?;
    let sign = validate_quad(&q)?;

    let mut out = dst_frame.clone();
    let xmin = q
        .iter()
        .map(|p| p.x)
        .fold(f64::INFINITY, f64::min)
        .ceil()
        .max(0.0);
    let ymin = q
        .iter()
        .map(|p| p.y)
        .fold(f64::INFINITY, f64::min)
        .ceil()
        .max(0.0);
    let xmax = q
        .iter()
        .map(|p| p.x)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min((dst_frame.width - 1) as f64);
    let ymax = q
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min((dst_frame.height - 1) as f64);
    if xmax < xmin || ymax < ymin {
        return Ok(out);
    }
    for y in ymin as usize..=ymax as usize {
        for x in xmin as usize..=xmax as usize {
            let p = Point2::new(x as f64, y as f64);
            if !inside_quad(&q, sign, p) {
                continue;
            }
            let Ok(s) = inv.apply(p) else { continue };
            if let Some(px) = bilinear_sample(ref_frame_with_patch, s.x, s.y) {
                out.set(x, y, px);
            }
        }
    }
    Ok(out)
}

/// Whether a destination pixel center lies inside the projected quad.
pub fn projected_quad_contains(
    patch_quad: &[Point2; 4],
    h_ref_to_dst: &Homography,
    p: Point2,
) -> Result<bool, ImagingError> {
    let q = project_quad(patch_quad, h_ref_to_dst)?;
    let sign = validate_quad(&q)?;
    Ok(inside_quad(&q, sign, p))
}
