use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Capabilities, Detection, Detector, DetectorError};
use crate::imaging::{BBox, GradientRaster, ImageBuffer};

pub const TEMPLATE_SIZE: usize = 16;

/// Template-correlation scorer standing in for a neural person detector.
///
/// Each window of the grayscale image is scored with
/// `sigmoid(k * (cos(window, template) - b))`, where `cos` is the normalized
/// (not mean-subtracted) cross-correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetectorSpec {
    /// Row-major `TEMPLATE_SIZE × TEMPLATE_SIZE` grayscale values in `[0, 1]`.
    pub template: Vec<f64>,
    pub steepness: f64,
    pub bias: f64,
    pub stride: usize,
    pub seed: u64,
}

impl ToyDetectorSpec {
    pub const DEFAULT_STEEPNESS: f64 = 10.0;
    pub const DEFAULT_BIAS: f64 = 0.6;
    pub const DEFAULT_STRIDE: usize = 8;
    pub const DEFAULT_SEED: u64 = 7;

    pub fn from_seed(seed: u64) -> Self {
        Self {
            template: generate_template(seed),
            steepness: Self::DEFAULT_STEEPNESS,
            bias: Self::DEFAULT_BIAS,
            stride: Self::DEFAULT_STRIDE,
            seed,
        }
    }

    pub fn with_params(seed: u64, steepness: f64, bias: f64, stride: usize) -> Self {
        Self {
            steepness,
            bias,
            stride,
            ..Self::from_seed(seed)
        }
    }

    pub fn size(&self) -> usize {
        TEMPLATE_SIZE
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.template.len() != TEMPLATE_SIZE * TEMPLATE_SIZE {
            return Err(DetectorError::InvalidSpec(format!(
                "template holds {} values, expected {}",
                self.template.len(),
                TEMPLATE_SIZE * TEMPLATE_SIZE
            )));
        }
        if self.template.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DetectorError::InvalidSpec(
                "template value outside [0, 1]".into(),
            ));
        }
        if self.stride == 0 {
            return Err(DetectorError::InvalidSpec("stride must be positive".into()));
        }
        if !self.steepness.is_finite() || !self.bias.is_finite() {
            return Err(DetectorError::InvalidSpec(
                "non-finite steepness or bias".into(),
            ));
        }
        Ok(())
    }

    /// The template as an RGB image (equal channels).
    pub fn template_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(TEMPLATE_SIZE, TEMPLATE_SIZE, |x, y| {
            [self.template[y * TEMPLATE_SIZE + x]; 3]
        })
        .expect("template dimensions are valid")
    }

    /// Score of a perfect template match.
    pub fn peak_objectness(&self) -> f64 {
        sigmoid(self.steepness * (1.0 - self.bias))
    }
}

impl Default for ToyDetectorSpec {
    fn default() -> Self {
        Self::from_seed(Self::DEFAULT_SEED)
    }
}

/// Deterministic person-like template: a compact, smoothly textured upright
/// blob on a black background.
fn generate_template(seed: u64) -> Vec<f64> {
    const GRID: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let control: Vec<f64> = (0..GRID * GRID).map(|_| rng.gen::<f64>()).collect();
    let n = TEMPLATE_SIZE as f64;
    let mut out = Vec::with_capacity(TEMPLATE_SIZE * TEMPLATE_SIZE);
    for y in 0..TEMPLATE_SIZE {
        for x in 0..TEMPLATE_SIZE {
            let gx = x as f64 / (n - 1.0) * (GRID - 1) as f64;
            let gy = y as f64 / (n - 1.0) * (GRID - 1) as f64;
            let (ix, iy) = ((gx as usize).min(GRID - 2), (gy as usize).min(GRID - 2));
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            let c = |i: usize, j: usize| control[j * GRID + i];
            let tex = (1.0 - fy) * ((1.0 - fx) * c(ix, iy) + fx * c(ix + 1, iy))
                + fy * ((1.0 - fx) * c(ix, iy + 1) + fx * c(ix + 1, iy + 1));

            let dx = (x as f64 - 7.5) / 1.8;
            let dy = (y as f64 - 7.5) / 2.6;
            let body = (-(dx * dx + dy * dy) / 2.0).exp();
            out.push((body * (0.3 + 0.7 * tex)).clamp(0.0, 1.0));
        }
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-window normalized correlation terms.
struct Windows {
    nx: usize,
    ny: usize,
    stride: usize,
    /// Objectness per window, row-major over the window grid.
    scores: Vec<f64>,
}

fn check_size(image: &ImageBuffer, spec: &ToyDetectorSpec) -> Result<(), DetectorError> {
    spec.validate()?;
    if image.width() < TEMPLATE_SIZE || image.height() < TEMPLATE_SIZE {
        return Err(DetectorError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            size: TEMPLATE_SIZE,
        });
    }
    Ok(())
}

fn template_norm(spec: &ToyDetectorSpec) -> f64 {
    spec.template.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn window_terms(gray: &[f64], width: usize, wx: usize, wy: usize, tpl: &[f64]) -> (f64, f64) {
    let mut dot = 0.0;
    let mut sq = 0.0;
    for v in 0..TEMPLATE_SIZE {
        let row = &gray[(wy + v) * width + wx..(wy + v) * width + wx + TEMPLATE_SIZE];
        let trow = &tpl[v * TEMPLATE_SIZE..(v + 1) * TEMPLATE_SIZE];
        for (g, t) in row.iter().zip(trow) {
            dot += g * t;
            sq += g * g;
        }
    }
    (dot, sq.sqrt())
}

fn score_windows(image: &ImageBuffer, spec: &ToyDetectorSpec) -> Windows {
    let gray = image.gray();
    let (w, h) = (image.width(), image.height());
    let stride = spec.stride;
    let nx = (w - TEMPLATE_SIZE) / stride + 1;
    let ny = (h - TEMPLATE_SIZE) / stride + 1;
    let nt = template_norm(spec);
    let mut scores = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let (dot, nw) = window_terms(&gray, w, gx * stride, gy * stride, &spec.template);
            let corr = dot / (nw * nt + 1e-9);
            scores.push(sigmoid(spec.steepness * (corr - spec.bias)));
        }
    }
    Windows {
        nx,
        ny,
        stride,
        scores,
    }
}

/// Objectness of every window as `(x, y, score)`, row-major.
pub fn toy_window_scores(
    image: &ImageBuffer,
    spec: &ToyDetectorSpec,
) -> Result<Vec<(usize, usize, f64)>, DetectorError> {
    check_size(image, spec)?;
    let win = score_windows(image, spec);
    Ok(win
        .scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ((i % win.nx) * win.stride, (i / win.nx) * win.stride, s))
        .collect())
}

/// Slides the template over the image and reports every window that reaches
/// objectness 0.5 and is a local maximum among its 3×3 grid neighbors.
pub fn toy_detect(
    image: &ImageBuffer,
    spec: &ToyDetectorSpec,
) -> Result<Vec<Detection>, DetectorError> {
    check_size(image, spec)?;
    let win = score_windows(image, spec);
    let (nx, ny) = (win.nx, win.ny);
    let mut out = Vec::new();
    for gy in 0..ny {
        for gx in 0..nx {
            let i = gy * nx + gx;
            let s = win.scores[i];
            if s < 0.5 {
                continue;
            }
            let mut is_max = true;
            'scan: for ny_ in gy.saturating_sub(1)..=(gy + 1).min(ny - 1) {
                for nx_ in gx.saturating_sub(1)..=(gx + 1).min(nx - 1) {
                    let j = ny_ * nx + nx_;
                    if j == i {
                        continue;
                    }
                    let sj = win.scores[j];
                    // Plateaus keep the earliest window in row-major order.
                    if sj > s || (sj == s && j < i) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                let (x, y) = ((gx * win.stride) as f64, (gy * win.stride) as f64);
                let bbox = BBox {
                    xmin: x,
                    ymin: y,
                    xmax: x + TEMPLATE_SIZE as f64,
                    ymax: y + TEMPLATE_SIZE as f64,
                };
                out.push(Detection::person(bbox, s));
            }
        }
    }
    Ok(out)
}

/// Maximum window objectness and its gradient with respect to every channel
/// value of the image. The gradient is supported on the argmax window only;
/// ties go to the lowest row, then the lowest column.
pub fn toy_max_objectness_grad(
    image: &ImageBuffer,
    spec: &ToyDetectorSpec,
) -> Result<(f64, GradientRaster), DetectorError> {
    check_size(image, spec)?;
    let win = score_windows(image, spec);
    let mut best = 0;
    for (i, &s) in win.scores.iter().enumerate() {
        if s > win.scores[best] {
            best = i;
        }
    }
    let s = win.scores[best];
    let (wx, wy) = ((best % win.nx) * win.stride, (best / win.nx) * win.stride);

    let gray = image.gray();
    let w = image.width();
    let nt = template_norm(spec);
    let (dot, nw) = window_terms(&gray, w, wx, wy, &spec.template);
    let denom = nw * nt + 1e-9;
    let ds_dcorr = spec.steepness * s * (1.0 - s);

    let mut grad = GradientRaster::zeros_like(image);
    for v in 0..TEMPLATE_SIZE {
        for u in 0..TEMPLATE_SIZE {
            let p = (wy + v) * w + wx + u;
            let t = spec.template[v * TEMPLATE_SIZE + u];
            let norm_term = if nw > 0.0 {
                dot * nt * gray[p] / (nw * denom * denom)
            } else {
                0.0
            };
            let dgray = ds_dcorr * (t / denom - norm_term);
            for c in 0..3 {
                grad.data[p * 3 + c] = dgray / 3.0;
            }
        }
    }
    Ok((s, grad))
}

/// Toy detector behind the [`Detector`] contract.
#[derive(Debug, Clone)]
pub struct ToyDetector {
    pub spec: ToyDetectorSpec,
}

impl ToyDetector {
    pub fn new(spec: ToyDetectorSpec) -> Result<Self, DetectorError> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Detector for ToyDetector {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            eval: true,
            grad: true,
        }
    }

    fn detect_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<Vec<Detection>>, DetectorError> {
        images
            .iter()
            .map(|img| toy_detect(img, &self.spec))
            .collect()
    }

    fn max_objectness_grad(
        &self,
        image: &ImageBuffer,
    ) -> Result<(f64, GradientRaster), DetectorError> {
        toy_max_objectness_grad(image, &self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_template_at(
        spec: &ToyDetectorSpec,
        w: usize,
        h: usize,
        at: &[(usize, usize)],
    ) -> ImageBuffer {
        let mut img = ImageBuffer::filled(w, h, [0.0; 3]).unwrap();
        for &(x0, y0) in at {
            for v in 0..TEMPLATE_SIZE {
                for u in 0..TEMPLATE_SIZE {
                    img.set(x0 + u, y0 + v, [spec.template[v * TEMPLATE_SIZE + u]; 3]);
                }
            }
        }
        img
    }

    #[test]
    fn template_is_deterministic_and_in_range() {
        let a = ToyDetectorSpec::from_seed(3);
        let b = ToyDetectorSpec::from_seed(3);
        assert_eq!(a, b);
        assert!(a.validate().is_ok());
        assert_ne!(a.template, ToyDetectorSpec::from_seed(4).template);
    }

    #[test]
    fn single_template_copy_gives_one_detection() {
        let spec = ToyDetectorSpec::default();
        let img = with_template_at(&spec, 64, 48, &[(24, 16)]);
        let dets = toy_detect(&img, &spec).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert_eq!(dets[0].bbox, BBox::new(24.0, 16.0, 40.0, 32.0).unwrap());
        assert!((dets[0].objectness - spec.peak_objectness()).abs() < 1e-8);
    }

    #[test]
    fn two_copies_give_two_detections() {
        let spec = ToyDetectorSpec::default();
        let img = with_template_at(&spec, 96, 48, &[(8, 8), (64, 24)]);
        let dets = toy_detect(&img, &spec).unwrap();
        let boxes: Vec<_> = dets.iter().map(|d| (d.bbox.xmin, d.bbox.ymin)).collect();
        assert_eq!(boxes, vec![(8.0, 8.0), (64.0, 24.0)]);
    }

    #[test]
    fn flat_zero_image_has_no_detections() {
        let spec = ToyDetectorSpec::default();
        let img = ImageBuffer::filled(48, 48, [0.0; 3]).unwrap();
        assert!(toy_detect(&img, &spec).unwrap().is_empty());
        let (s, g) = toy_max_objectness_grad(&img, &spec).unwrap();
        assert!(s < 0.5);
        assert!(g.is_finite());
    }

    #[test]
    fn saturated_scores_have_vanishing_gradient() {
        let spec = ToyDetectorSpec::with_params(7, 200.0, 0.95, 8);
        let img = ImageBuffer::filled(32, 32, [0.2; 3]).unwrap();
        let (_, g) = toy_max_objectness_grad(&img, &spec).unwrap();
        assert!(g.max_abs() < 1e-6);
    }

    #[test]
    fn gradient_support_is_the_argmax_window() {
        let spec = ToyDetectorSpec::default();
        let mut img = with_template_at(&spec, 48, 48, &[(16, 8)]);
        img.map_values(|i, v| v + 0.01 * ((i % 7) as f64 / 7.0));
        let (_, g) = toy_max_objectness_grad(&img, &spec).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                let inside = (16..32).contains(&x) && (8..24).contains(&y);
                let nz = (0..3).any(|c| g.data[(y * 48 + x) * 3 + c] != 0.0);
                assert_eq!(nz, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn too_small_image() {
        let spec = ToyDetectorSpec::default();
        let img = ImageBuffer::filled(15, 40, [0.0; 3]).unwrap();
        assert!(matches!(
            toy_detect(&img, &spec),
            Err(DetectorError::ImageTooSmall { .. })
        ));
    }
}
