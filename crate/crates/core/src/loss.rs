//! Patch loss terms: non-printability, total variation and objectness, and
//! their weighted sum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{GradientRaster, ImageBuffer, Rgb};

pub type PatchGradient = GradientRaster;

/// Raw total variation below this value is reported as the floor and contributes no gradient.
pub const TV_FLOOR: f64 = 0.1;

/// Keeps the square roots in the TV term differentiable at equal neighbors.
pub const TV_EPSILON: f64 = 1e-12;

pub const DEFAULT_PALETTE: &str = include_str!("../data/default_palette.txt");

#[derive(Debug, Error)]
pub enum LossError {
    #[error("total variation needs a patch of at least 2x2, got {0}x{1}")]
    PatchTooSmall(usize, usize),
    #[error("printable color set is empty")]
    EmptyPalette,
    #[error("{source_name}:{line}: {message}")]
    PaletteParse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scaling factors of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 2.5,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn is_valid(&self) -> bool {
        [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Colors a printer is assumed to reproduce faithfully.
#[derive(Debug, Clone, PartialEq)]
pub struct PrintableColorSet {
    colors: Vec<Rgb>,
}

impl PrintableColorSet {
    pub fn new(colors: Vec<Rgb>) -> Result<Self, LossError> {
        if colors.is_empty() {
            return Err(LossError::EmptyPalette);
        }
        if let Some((i, _)) = colors
            .iter()
            .enumerate()
            .find(|(_, c)| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(LossError::PaletteParse {
                source_name: "<colors>".into(),
                line: i + 1,
                message: "channel outside [0, 1]".into(),
            });
        }
        Ok(Self { colors })
    }

    /// Parses the palette text format: three whitespace-separated floats per
    /// line, `#` comment lines and blank lines ignored.
    pub fn parse(text: &str, source_name: &str) -> Result<Self, LossError> {
        let mut colors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| LossError::PaletteParse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != 3 {
                return Err(err(format!("expected 3 values, found {}", vals.len())));
            }
            if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(err("channel outside [0, 1]".into()));
            }
            colors.push([vals[0], vals[1], vals[2]]);
        }
        if colors.is_empty() {
            return Err(LossError::EmptyPalette);
        }
        Ok(Self { colors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LossError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LossError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    /// Index of and distance to the nearest color; ties go to the lowest index.
    pub fn nearest(&self, p: Rgb) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.colors.iter().enumerate() {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        (best.0, best.1.sqrt())
    }
}

impl Default for PrintableColorSet {
    fn default() -> Self {
        Self::parse(DEFAULT_PALETTE, "default_palette.txt").expect("bundled palette parses")
    }
}

/// Mean distance from each pixel to its nearest printable color, with gradient.
pub fn nps_score(patch: &ImageBuffer, set: &PrintableColorSet) -> (f64, PatchGradient) {
    let n = patch.pixel_count() as f64;
    let mut grad = PatchGradient::zeros_like(patch);
    let mut total = 0.0;
    for (idx, px) in patch.as_slice().chunks_exact(3).enumerate() {
        let p = [px[0], px[1], px[2]];
        let (k, d) = set.nearest(p);
        total += d;
        if d > 0.0 {
            let c = set.colors[k];
            for ch in 0..3 {
                grad.data[idx * 3 + ch] = (p[ch] - c[ch]) / (d * n);
            }
        }
    }
    (total / n, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvScore {
    pub raw: f64,
    /// `max(raw, TV_FLOOR)`.
    pub effective: f64,
    /// Gradient of `effective`; identically zero below the floor.
    pub grad: PatchGradient,
}

/// Total variation: for every horizontally and every vertically adjacent pixel
/// pair, the Euclidean RGB difference, summed and divided by the pixel count.
pub fn tv_score(patch: &ImageBuffer) -> Result<TvScore, LossError> {
    let (w, h) = (patch.width(), patch.height());
    if w < 2 || h < 2 {
        return Err(LossError::PatchTooSmall(w, h));
    }
    let n = (w * h) as f64;
    let px = patch.as_slice();
    let mut grad = PatchGradient::zeros(w, h);
    let mut sum = 0.0;

    let mut pair = |a: usize, b: usize, grad: &mut PatchGradient| {
        let mut d = [0.0; 3];
        let mut s = TV_EPSILON;
        for c in 0..3 {
            d[c] = px[b * 3 + c] - px[a * 3 + c];
            s += d[c] * d[c];
        }
        let r = s.sqrt();
        sum += r;
        for c in 0..3 {
            let g = d[c] / (r * n);
            grad.data[b * 3 + c] += g;
            grad.data[a * 3 + c] -= g;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if x + 1 < w {
                pair(a, a + 1, &mut grad);
            }
            if y + 1 < h {
                pair(a, a + w, &mut grad);
            }
        }
    }
    let raw = sum / n;
    if raw < TV_FLOOR {
        return Ok(TvScore {
            raw,
            effective: TV_FLOOR,
            grad: PatchGradient::zeros(w, h),
        });
    }
    Ok(TvScore {
        raw,
        effective: raw,
        grad,
    })
}

pub fn total_loss(l_nps: f64, l_tv_effective: f64, l_obj: f64, w: &LossWeights) -> f64 {
    w.alpha * l_nps + w.beta * l_tv_effective + w.gamma * l_obj
}

/// The same weighted sum applied to the term gradients.
pub fn total_gradient(
    g_nps: &PatchGradient,
    g_tv: &PatchGradient,
    g_obj: &PatchGradient,
    w: &LossWeights,
) -> PatchGradient {
    let mut out = PatchGradient::zeros(g_nps.width, g_nps.height);
    out.add_scaled(g_nps, w.alpha);
    out.add_scaled(g_tv, w.beta);
    out.add_scaled(g_obj, w.gamma);
    out
}

/// Values of every loss term at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_nps: f64,
    pub l_tv: f64,
    pub l_tv_effective: f64,
    pub l_obj: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_nps: f64, l_tv: f64, l_tv_effective: f64, l_obj: f64, w: &LossWeights) -> Self {
        Self {
            l_nps,
            l_tv,
            l_tv_effective,
            l_obj,
            total: total_loss(l_nps, l_tv_effective, l_obj, w),
        }
    }
}
