//! Adam descent on the weighted patch loss over patch pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{Detector, DetectorError};
use crate::imaging::{
    place_patches, BBox, ImageBuffer, ImagingError, PatchPlacement, PlacementRecord,
    DEFAULT_ANCHOR, DEFAULT_PLACEMENT_SCALE,
};
use crate::loss::{
    nps_score, total_gradient, tv_score, LossBreakdown, LossError, LossWeights, PatchGradient,
    PrintableColorSet,
};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training samples")]
    NoSamples,
    #[error("training sample {0} has no person boxes")]
    SampleWithoutBoxes(usize),
    #[error("no forward placement recorded for this frame")]
    MissingForwardRecord,
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub patch_width: usize,
    pub patch_height: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub iterations: usize,
    pub seed: u64,
    /// Patch width as a fraction of each person box's width.
    pub placement_scale: f64,
    pub anchor: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_width: 300,
            patch_height: 300,
            minibatch: 4,
            lr: 0.03,
            weights: LossWeights::default(),
            iterations: 1000,
            seed: 0,
            placement_scale: DEFAULT_PLACEMENT_SCALE,
            anchor: DEFAULT_ANCHOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.patch_width < 2 || self.patch_height < 2 {
            return bad("patch must be at least 2x2");
        }
        if self.minibatch < 1 {
            return bad("minibatch must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if !self.weights.is_valid() {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.placement_scale > 0.0 && self.placement_scale <= 1.0) {
            return bad("placement scale must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.anchor.0) || !(0.0..=1.0).contains(&self.anchor.1) {
            return bad("anchor must lie in [0, 1]²");
        }
        Ok(())
    }

    pub fn placements(&self, boxes: &[BBox]) -> Vec<PatchPlacement> {
        boxes
            .iter()
            .map(|&bbox| PatchPlacement {
                bbox,
                scale: self.placement_scale,
                anchor: self.anchor,
            })
            .collect()
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(patch: &ImageBuffer) -> Self {
        let n = patch.as_slice().len();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Uniform random patch from a seeded generator.
pub fn init_patch(width: usize, height: usize, seed: u64) -> Result<ImageBuffer, OptimizerError> {
    if width < 2 || height < 2 {
        return Err(OptimizerError::InvalidConfig(format!(
            "patch must be at least 2x2, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3).map(|_| rng.gen::<f64>()).collect();
    Ok(ImageBuffer::from_raw(width, height, data)?)
}

/// One bias-corrected Adam update followed by clamping to `[0, 1]`.
pub fn adam_step(
    state: &mut AdamState,
    grad: &PatchGradient,
    patch: &mut ImageBuffer,
    lr: f64,
) -> Result<(), OptimizerError> {
    if !grad.shape_matches(patch) || state.m.len() != patch.as_slice().len() {
        return Err(OptimizerError::ShapeMismatch(format!(
            "patch {}x{}, gradient {}x{}, state of {} values",
            patch.width(),
            patch.height(),
            grad.width,
            grad.height,
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - AdamState::BETA1.powi(state.t as i32);
    let bc2 = 1.0 - AdamState::BETA2.powi(state.t as i32);
    let (m, v) = (&mut state.m, &mut state.v);
    patch.map_values(|i, p| {
        let g = grad.data[i];
        m[i] = AdamState::BETA1 * m[i] + (1.0 - AdamState::BETA1) * g;
        v[i] = AdamState::BETA2 * v[i] + (1.0 - AdamState::BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p - lr * m_hat / (v_hat.sqrt() + AdamState::EPS)
    });
    Ok(())
}

/// Routes a frame-space gradient back to the patch pixels through the
/// bilinear resize used when compositing. Each frame pixel belongs to the last
/// placement that wrote it.
pub fn backprop_through_placement(
    frame_grad: &PatchGradient,
    records: &[PlacementRecord],
) -> Result<PatchGradient, OptimizerError> {
    let first = records
        .first()
        .ok_or(OptimizerError::MissingForwardRecord)?;
    let (pw, ph) = (first.patch_width, first.patch_height);
    if records
        .iter()
        .any(|r| (r.patch_width, r.patch_height) != (pw, ph))
    {
        return Err(OptimizerError::ShapeMismatch(
            "placement records disagree on patch size".into(),
        ));
    }
    let fw = frame_grad.width;
    let mut claimed = vec![false; fw * frame_grad.height];
    let mut out = PatchGradient::zeros(pw, ph);
    for rec in records.iter().rev() {
        if rec.cols.1 > fw || rec.rows.1 > frame_grad.height {
            return Err(OptimizerError::ShapeMismatch(
                "placement record exceeds the frame gradient".into(),
            ));
        }
        let col_taps: Vec<_> = (rec.cols.0..rec.cols.1).map(|i| rec.col_taps(i)).collect();
        for j in rec.rows.0..rec.rows.1 {
            let ty = rec.row_taps(j);
            for (k, i) in (rec.cols.0..rec.cols.1).enumerate() {
                let f = j * fw + i;
                if claimed[f] {
                    continue;
                }
                claimed[f] = true;
                let tx = col_taps[k];
                let taps = [
                    (tx.lo, ty.lo, (1.0 - tx.frac) * (1.0 - ty.frac)),
                    (tx.hi, ty.lo, tx.frac * (1.0 - ty.frac)),
                    (tx.lo, ty.hi, (1.0 - tx.frac) * ty.frac),
                    (tx.hi, ty.hi, tx.frac * ty.frac),
                ];
                for c in 0..3 {
                    let g = frame_grad.data[f * 3 + c];
                    if g == 0.0 {
                        continue;
                    }
                    for &(u, v, wgt) in &taps {
                        out.data[(v * pw + u) * 3 + c] += wgt * g;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A training frame and the persons the patch is composited onto.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub frame: ImageBuffer,
    pub person_bboxes: Vec<BBox>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub patch: ImageBuffer,
    /// Loss at the start of each iteration, before its update.
    pub history: Vec<LossBreakdown>,
}

/// Mean over `samples` of the detector's max objectness after compositing the
/// patch, with its gradient with respect to the patch.
pub fn objectness_and_grad(
    patch: &ImageBuffer,
    samples: &[&TrainSample],
    detector: &dyn Detector,
    cfg: &TrainConfig,
) -> Result<(f64, PatchGradient), OptimizerError> {
    let per_sample = samples
        .par_iter()
        .map(|s| -> Result<(f64, PatchGradient), OptimizerError> {
            let composite = place_patches(&s.frame, patch, &cfg.placements(&s.person_bboxes))?;
            let (obj, frame_grad) = detector.max_objectness_grad(&composite.image)?;
            let grad = if composite.records.is_empty() {
                PatchGradient::zeros_like(patch)
            } else {
                backprop_through_placement(&frame_grad, &composite.records)?
            };
            Ok((obj, grad))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // Reduce in index order so the result does not depend on thread count.
    let n = samples.len() as f64;
    let mut total = 0.0;
    let mut grad = PatchGradient::zeros_like(patch);
    for (obj, g) in &per_sample {
        total += obj;
        grad.add_scaled(g, 1.0);
    }
    Ok((total / n, grad.scaled(1.0 / n)))
}

/// Trains a patch against a gradient-capable detector.
pub fn train_patch(
    samples: &[TrainSample],
    detector: &dyn Detector,
    cfg: &TrainConfig,
    palette: &PrintableColorSet,
) -> Result<TrainOutcome, OptimizerError> {
    cfg.validate()?;
    if !detector.capabilities().grad {
        return Err(DetectorError::NotGradCapable.into());
    }
    if samples.is_empty() {
        return Err(OptimizerError::NoSamples);
    }
    if let Some(i) = samples.iter().position(|s| s.person_bboxes.is_empty()) {
        return Err(OptimizerError::SampleWithoutBoxes(i));
    }

    let mut patch = init_patch(cfg.patch_width, cfg.patch_height, cfg.seed)?;
    let mut state = AdamState::new(&patch);
    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler.set_stream(1);
    let mut history = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let batch: Vec<&TrainSample> = (0..cfg.minibatch)
            .map(|_| &samples[sampler.gen_range(0..samples.len())])
            .collect();
        let (l_obj, g_obj) = objectness_and_grad(&patch, &batch, detector, cfg)?;
        let (l_nps, g_nps) = nps_score(&patch, palette);
        let tv = tv_score(&patch)?;
        let breakdown = LossBreakdown::new(l_nps, tv.raw, tv.effective, l_obj, &cfg.weights);
        log::debug!("iteration {it}: {breakdown:?}");
        history.push(breakdown);

        let grad = total_gradient(&g_nps, &tv.grad, &g_obj, &cfg.weights);
        adam_step(&mut state, &grad, &mut patch, cfg.lr)?;
    }
    Ok(TrainOutcome { patch, history })
}
