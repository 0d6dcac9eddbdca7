//! Cross-view recall of a projected patch attack.
//!
//! Recall in a destination view only counts persons annotated in both the
//! reference view and that destination view for the same frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{DatasetError, ViewSetConfig};
use crate::detector::{Detection, Detector, DetectorError};
use crate::geometry::Homography;
use crate::imaging::{
    place_patches, project_patch, BBox, ImageBuffer, ImagingError, PatchPlacement, DEFAULT_ANCHOR,
    DEFAULT_PLACEMENT_SCALE,
};

pub type ViewId = u32;
pub type FrameId = u32;
pub type PersonId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub view_id: ViewId,
    pub frame_id: FrameId,
    pub person_id: PersonId,
    pub bbox: BBox,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no person is visible in both view {ref_view} and view {dst_view}")]
    EmptyDenominator { ref_view: ViewId, dst_view: ViewId },
    #[error("difference is undefined for a clean recall of zero")]
    UndefinedForZeroClean,
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Greedy one-to-one matching of detections to ground truth.
///
/// Detections at or above `conf_thresh` are visited by descending objectness
/// (input order breaks ties); each claims the still-unmatched box with the
/// highest IoU at or above `iou_thresh`, lower person id first on equal IoU.
/// Returns the matched person ids.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
    conf_thresh: f64,
) -> BTreeSet<PersonId> {
    let mut order: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.objectness >= conf_thresh)
        .collect();
    order.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));

    let mut taken = vec![false; gts.len()];
    let mut matched = BTreeSet::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gts.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o < iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, bo)) => o > bo || (o == bo && g.person_id < gts[b].person_id),
            };
            if better {
                best = Some((k, o));
            }
        }
        if let Some((k, _)) = best {
            taken[k] = true;
            matched.insert(gts[k].person_id);
        }
    }
    matched
}

/// Matched person ids keyed by `(view, frame)`.
pub type MatchTable = BTreeMap<(ViewId, FrameId), BTreeSet<PersonId>>;

/// Persons per frame annotated in both views.
pub fn co_visible(
    gts: &[GroundTruthBox],
    ref_view: ViewId,
    dst_view: ViewId,
) -> BTreeSet<(FrameId, PersonId)> {
    let in_view = |v: ViewId| -> BTreeSet<(FrameId, PersonId)> {
        gts.iter()
            .filter(|g| g.view_id == v)
            .map(|g| (g.frame_id, g.person_id))
            .collect()
    };
    let a = in_view(ref_view);
    let b = in_view(dst_view);
    a.intersection(&b).copied().collect()
}

/// Percentage of co-visible persons matched in `dst_view`.
pub fn cross_view_recall(
    matches: &MatchTable,
    gts: &[GroundTruthBox],
    ref_view: ViewId,
    dst_view: ViewId,
) -> Result<f64, EvalError> {
    let denom = co_visible(gts, ref_view, dst_view);
    if denom.is_empty() {
        return Err(EvalError::EmptyDenominator { ref_view, dst_view });
    }
    let hit = denom
        .iter()
        .filter(|(f, p)| {
            matches
                .get(&(dst_view, *f))
                .is_some_and(|set| set.contains(p))
        })
        .count();
    Ok(100.0 * hit as f64 / denom.len() as f64)
}

/// Relative change from clean to patched recall, in percent.
pub fn difference_pct(clean: f64, patched: f64) -> Result<f64, EvalError> {
    if !(clean > 0.0) {
        return Err(EvalError::UndefinedForZeroClean);
    }
    Ok((patched - clean) / clean * 100.0)
}

/// Rounds to two decimals, halves away from zero.
///
/// Rounding works on the shortest decimal form of `x`, so a printed value such
/// as 1.005 rounds to 1.01 even though its binary value is slightly below.
pub fn round2(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    if frac.len() <= 2 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let mut cents: f64 = format!("{int}{}", &frac[..2]).parse().unwrap_or(0.0);
    if frac.as_bytes()[2] >= b'5' {
        cents += 1.0;
    }
    let r = cents / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r.copysign(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub view_id: ViewId,
    pub is_reference: bool,
    /// `None` when no person is co-visible with the reference view.
    pub clean_recall: Option<f64>,
    pub patched_recall: Option<f64>,
    pub difference: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", round2(x)))
        .unwrap_or_else(|| "n/a".into())
}

pub fn reports_to_csv(reports: &[RecallReport]) -> String {
    let mut out = String::from("view,clean_recall,patched_recall,difference_pct\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.view_id,
            fmt_opt(r.clean_recall),
            fmt_opt(r.patched_recall),
            fmt_opt(r.difference)
        );
    }
    out
}

/// Parses the CSV written by [`reports_to_csv`]. The first row is taken as the
/// reference view.
pub fn reports_from_csv(text: &str) -> Result<Vec<RecallReport>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(format!("line {}: expected 4 columns", i + 1));
        }
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s == "n/a" {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e| format!("line {}: {s:?}: {e}", i + 1))
            }
        };
        out.push(RecallReport {
            view_id: cols[0]
                .parse()
                .map_err(|e| format!("line {}: view {:?}: {e}", i + 1, cols[0]))?,
            is_reference: out.is_empty(),
            clean_recall: opt(cols[1])?,
            patched_recall: opt(cols[2])?,
            difference: opt(cols[3])?,
        });
    }
    Ok(out)
}

/// Aligned plain-text table: View | Clean Recall | Patched Recall | Difference (%).
pub fn reports_to_table(reports: &[RecallReport]) -> String {
    let header = ["View", "Clean Recall", "Patched Recall", "Difference (%)"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            let view = if r.is_reference {
                format!("{} (ref)", r.view_id)
            } else {
                r.view_id.to_string()
            };
            let diff = r
                .difference
                .map(|d| format!("{:.2}%", round2(d)))
                .unwrap_or_else(|| "n/a".into());
            [
                view,
                fmt_opt(r.clean_recall),
                fmt_opt(r.patched_recall),
                diff,
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let rule: String = {
        let parts: Vec<String> = widths.iter().map(|w| "-".repeat(w + 2)).collect();
        format!("+{}+\n", parts.join("+"))
    };
    let line = |cells: [&str; 4]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!(" {c:<w$} "))
            .collect();
        format!("|{}|\n", parts.join("|"))
    };
    let mut out = rule.clone();
    out.push_str(&line(header));
    out.push_str(&rule);
    for row in &rows {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
    }
    out.push_str(&rule);
    out
}

/// Reference→destination homographies, static per view pair or per frame.
#[derive(Debug, Clone, Default)]
pub struct HomographyTable {
    pub by_pair: BTreeMap<(ViewId, ViewId), Homography>,
    pub by_frame: BTreeMap<(FrameId, ViewId, ViewId), Homography>,
}

impl HomographyTable {
    /// Frame-specific entries take precedence over static ones.
    pub fn get(&self, frame: FrameId, ref_view: ViewId, dst_view: ViewId) -> Option<&Homography> {
        self.by_frame
            .get(&(frame, ref_view, dst_view))
            .or_else(|| self.by_pair.get(&(ref_view, dst_view)))
    }
}

/// Source of frame images for an experiment.
pub trait FrameSource: Sync {
    fn frame_ids(&self) -> Vec<FrameId>;
    fn load(&self, view: ViewId, frame: FrameId) -> Result<ImageBuffer, DatasetError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    pub placement_scale: f64,
    pub anchor: (f64, f64),
    /// Keep every patched frame in the output.
    pub keep_frames: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            conf_thresh: 0.5,
            placement_scale: DEFAULT_PLACEMENT_SCALE,
            anchor: DEFAULT_ANCHOR,
            keep_frames: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("no homography for frame {frame}, view {ref_view} -> view {dst_view}")]
    MissingHomography {
        frame: FrameId,
        ref_view: ViewId,
        dst_view: ViewId,
    },
    #[error("frame {frame}, view {ref_view} -> view {dst_view}: {source}")]
    Projection {
        frame: FrameId,
        ref_view: ViewId,
        dst_view: ViewId,
        #[source]
        source: ImagingError,
    },
    #[error("frame {frame}: {source}")]
    Imaging {
        frame: FrameId,
        #[source]
        source: ImagingError,
    },
    #[error("invalid experiment parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone)]
pub struct PatchedFrame {
    pub view: ViewId,
    pub frame: FrameId,
    pub image: ImageBuffer,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Reference view first, then destinations in view-set order.
    pub reports: Vec<RecallReport>,
    pub clean_matches: MatchTable,
    pub patched_matches: MatchTable,
    pub patched_frames: Vec<PatchedFrame>,
}

struct FrameResult {
    clean: Vec<((ViewId, FrameId), BTreeSet<PersonId>)>,
    patched: Vec<((ViewId, FrameId), BTreeSet<PersonId>)>,
    frames: Vec<PatchedFrame>,
}

/// Composites the patch onto every reference-view person, projects it into each
/// destination view and measures clean and patched cross-view recall per view.
///
/// Each frame is one detector batch; images are named `view{V}_frame{F}_clean`
/// and `view{V}_frame{F}_patched`.
pub fn run_experiment(
    source: &dyn FrameSource,
    gts: &[GroundTruthBox],
    patch: &ImageBuffer,
    views: &ViewSetConfig,
    homographies: &HomographyTable,
    detector: &dyn Detector,
    params: &EvalParams,
) -> Result<ExperimentOutput, ExperimentError> {
    if !(params.iou_thresh > 0.0 && params.iou_thresh < 1.0)
        || !(params.conf_thresh > 0.0 && params.conf_thresh < 1.0)
    {
        return Err(ExperimentError::InvalidParams(
            "thresholds must lie in (0, 1)".into(),
        ));
    }
    let ref_view = views.reference_view;
    let frames = source.frame_ids();

    // Fail before any detector work when a homography is missing.
    for &f in &frames {
        for &d in &views.destination_views {
            if homographies.get(f, ref_view, d).is_none() {
                return Err(ExperimentError::MissingHomography {
                    frame: f,
                    ref_view,
                    dst_view: d,
                });
            }
        }
    }

    let mut by_key: BTreeMap<(ViewId, FrameId), Vec<GroundTruthBox>> = BTreeMap::new();
    for g in gts {
        by_key.entry((g.view_id, g.frame_id)).or_default().push(*g);
    }
    let empty = Vec::new();
    let gts_of = |v: ViewId, f: FrameId| by_key.get(&(v, f)).unwrap_or(&empty);

    let per_frame = frames
        .par_iter()
        .map(|&f| -> Result<FrameResult, ExperimentError> {
            let ref_clean = source.load(ref_view, f)?;
            let placements: Vec<PatchPlacement> = gts_of(ref_view, f)
                .iter()
                .map(|g| PatchPlacement {
                    bbox: g.bbox,
                    scale: params.placement_scale,
                    anchor: params.anchor,
                })
                .collect();
            let composite = place_patches(&ref_clean, patch, &placements)
                .map_err(|source| ExperimentError::Imaging { frame: f, source })?;
            let quads: Vec<_> = composite.records.iter().map(|r| r.quad()).collect();

            let mut view_ids = vec![ref_view];
            let mut images = vec![ref_clean, composite.image];
            for &d in &views.destination_views {
                let h = homographies.get(f, ref_view, d).expect("checked above");
                let clean = source.load(d, f)?;
                let mut patched = clean.clone();
                for q in &quads {
                    patched = project_patch(&patched, &images[1], q, h).map_err(|source| {
                        ExperimentError::Projection {
                            frame: f,
                            ref_view,
                            dst_view: d,
                            source,
                        }
                    })?;
                }
                view_ids.push(d);
                images.push(clean);
                images.push(patched);
            }

            let refs: Vec<&ImageBuffer> = images.iter().collect();
            let names: Vec<String> = view_ids
                .iter()
                .flat_map(|v| ["clean", "patched"].map(|kind| format!("view{v}_frame{f}_{kind}")))
                .collect();
            let dets = detector.detect_batch_named(&names, &refs)?;
            let mut result = FrameResult {
                clean: Vec::new(),
                patched: Vec::new(),
                frames: Vec::new(),
            };
            for (k, &v) in view_ids.iter().enumerate() {
                let g = gts_of(v, f);
                let m =
                    |d: &[Detection]| match_detections(d, g, params.iou_thresh, params.conf_thresh);
                result.clean.push(((v, f), m(&dets[2 * k])));
                result.patched.push(((v, f), m(&dets[2 * k + 1])));
            }
            if params.keep_frames {
                for (k, &v) in view_ids.iter().enumerate() {
                    result.frames.push(PatchedFrame {
                        view: v,
                        frame: f,
                        image: images[2 * k + 1].clone(),
                    });
                }
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut clean_matches = MatchTable::new();
    let mut patched_matches = MatchTable::new();
    let mut patched_frames = Vec::new();
    for r in per_frame {
        clean_matches.extend(r.clean);
        patched_matches.extend(r.patched);
        patched_frames.extend(r.frames);
    }

    let reports = std::iter::once(ref_view)
        .chain(views.destination_views.iter().copied())
        .map(|v| {
            let clean = cross_view_recall(&clean_matches, gts, ref_view, v).ok();
            let patched = cross_view_recall(&patched_matches, gts, ref_view, v).ok();
            let difference = match (clean, patched) {
                (Some(c), Some(p)) => difference_pct(c, p).ok(),
                _ => None,
            };
            RecallReport {
                view_id: v,
                is_reference: v == ref_view,
                clean_recall: clean,
                patched_recall: patched,
                difference,
            }
        })
        .collect();

    Ok(ExperimentOutput {
        reports,
        clean_matches,
        patched_matches,
        patched_frames,
    })
}
