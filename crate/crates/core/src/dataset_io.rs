//! Multi-view dataset layout, annotation and correspondence files, and the
//! synthetic rig generator.
//!
//! A dataset directory holds a `manifest.json`:
//!
//! ```json
//! {
//!   "views": [1, 2],
//!   "frames": [0, 1],
//!   "frame_pattern": "view{V}/frame{F}.png",
//!   "annotations": "annotations.csv",
//!   "correspondences": [{ "ref_view": 1, "dst_view": 2, "path": "corr_1_2.csv" }],
//!   "view_set": { "reference_view": 1, "destination_views": [2] }
//! }
//! ```
//!
//! A correspondence entry may carry a `"frame"` to apply to that frame only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::ToyDetectorSpec;
use crate::evaluation::{FrameId, FrameSource, GroundTruthBox, HomographyTable, ViewId};
use crate::geometry::{estimate_homography, Correspondence, GeometryError, Homography, Point2};
use crate::imaging::{read_png, warp_image, write_png, BBox, ImageBuffer, ImagingError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FRAME_PATTERN: &str = "view{V}/frame{F}.png";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("missing correspondence file {path} for view {ref_view} -> view {dst_view}")]
    MissingCorrespondences {
        ref_view: ViewId,
        dst_view: ViewId,
        path: PathBuf,
    },
    #[error("view {view}, frame {frame} is listed more than once")]
    DuplicateFrame { view: ViewId, frame: FrameId },
    #[error("{path}:{line}: invalid box ({xmin}, {ymin}, {xmax}, {ymax})")]
    InvalidBox {
        path: PathBuf,
        line: usize,
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("{path}: {count} correspondences, at least 4 required")]
    TooFewPoints { path: PathBuf, count: usize },
    #[error("invalid view set: {0}")]
    InvalidViewSet(String),
    #[error("invalid rig spec: {0}")]
    InvalidSpec(String),
    #[error("homography for view {ref_view} -> view {dst_view}: {source}")]
    Homography {
        ref_view: ViewId,
        dst_view: ViewId,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImagingError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSetConfig {
    pub reference_view: ViewId,
    pub destination_views: Vec<ViewId>,
}

impl ViewSetConfig {
    pub fn validate(&self, available: &[ViewId]) -> Result<(), DatasetError> {
        let known: BTreeSet<_> = available.iter().collect();
        let mut seen = BTreeSet::new();
        if !known.contains(&self.reference_view) {
            return Err(DatasetError::InvalidViewSet(format!(
                "reference view {} is not in the dataset",
                self.reference_view
            )));
        }
        for v in &self.destination_views {
            if *v == self.reference_view {
                return Err(DatasetError::InvalidViewSet(format!(
                    "view {v} is both reference and destination"
                )));
            }
            if !known.contains(v) {
                return Err(DatasetError::InvalidViewSet(format!(
                    "destination view {v} is not in the dataset"
                )));
            }
            if !seen.insert(*v) {
                return Err(DatasetError::InvalidViewSet(format!(
                    "destination view {v} listed twice"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceEntry {
    pub ref_view: ViewId,
    pub dst_view: ViewId,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Directory holding the manifest; every other path is relative to it.
    #[serde(skip)]
    pub root: PathBuf,
    pub views: Vec<ViewId>,
    pub frames: Vec<FrameId>,
    #[serde(default = "default_pattern")]
    pub frame_pattern: String,
    pub annotations: PathBuf,
    #[serde(default)]
    pub correspondences: Vec<CorrespondenceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_set: Option<ViewSetConfig>,
}

fn default_pattern() -> String {
    DEFAULT_FRAME_PATTERN.to_string()
}

impl DatasetManifest {
    pub fn frame_path(&self, view: ViewId, frame: FrameId) -> PathBuf {
        self.root.join(
            self.frame_pattern
                .replace("{V}", &view.to_string())
                .replace("{F}", &frame.to_string()),
        )
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join(&self.annotations)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let mut views = BTreeSet::new();
        for &v in &self.views {
            if !views.insert(v) {
                let frame = self.frames.first().copied().unwrap_or(0);
                return Err(DatasetError::DuplicateFrame { view: v, frame });
            }
        }
        let mut frames = BTreeSet::new();
        for &f in &self.frames {
            if !frames.insert(f) {
                let view = self.views.first().copied().unwrap_or(0);
                return Err(DatasetError::DuplicateFrame { view, frame: f });
            }
        }
        // Distinct (view, frame) pairs must not share an image file.
        let mut owners: BTreeMap<PathBuf, (ViewId, FrameId)> = BTreeMap::new();
        for &v in &self.views {
            for &f in &self.frames {
                let path = self.frame_path(v, f);
                if owners.insert(path.clone(), (v, f)).is_some() {
                    return Err(DatasetError::DuplicateFrame { view: v, frame: f });
                }
                if !path.is_file() {
                    return Err(DatasetError::MissingFile(path));
                }
            }
        }
        let ann = self.annotations_path();
        if !ann.is_file() {
            return Err(DatasetError::MissingFile(ann));
        }
        for c in &self.correspondences {
            for v in [c.ref_view, c.dst_view] {
                if !views.contains(&v) {
                    return Err(DatasetError::InvalidViewSet(format!(
                        "correspondence file {} names unknown view {v}",
                        c.path.display()
                    )));
                }
            }
            let path = self.root.join(&c.path);
            if !path.is_file() {
                return Err(DatasetError::MissingCorrespondences {
                    ref_view: c.ref_view,
                    dst_view: c.dst_view,
                    path,
                });
            }
        }
        if let Some(vs) = &self.view_set {
            vs.validate(&self.views)?;
        }
        Ok(())
    }

    /// Estimates every listed homography. Missing reverse directions are
    /// filled in by inversion.
    pub fn homographies(&self) -> Result<HomographyTable, DatasetError> {
        let mut table = HomographyTable::default();
        for c in &self.correspondences {
            let corrs = load_correspondences(self.root.join(&c.path))?;
            let wrap = |source| DatasetError::Homography {
                ref_view: c.ref_view,
                dst_view: c.dst_view,
                source,
            };
            let h = estimate_homography(&corrs).map_err(wrap)?;
            let (rms, max) = crate::geometry::reprojection_error(&h, &corrs);
            log::debug!(
                "view {} -> {}: reprojection rms {rms:.3e} px, max {max:.3e} px",
                c.ref_view,
                c.dst_view
            );
            match c.frame {
                Some(f) => table.by_frame.insert((f, c.ref_view, c.dst_view), h),
                None => table.by_pair.insert((c.ref_view, c.dst_view), h),
            };
        }
        let pairs: Vec<_> = table.by_pair.iter().map(|(k, h)| (*k, *h)).collect();
        for ((a, b), h) in pairs {
            if !table.by_pair.contains_key(&(b, a)) {
                if let Ok(inv) = h.invert() {
                    table.by_pair.insert((b, a), inv);
                }
            }
        }
        let frames: Vec<_> = table.by_frame.iter().map(|(k, h)| (*k, *h)).collect();
        for ((f, a, b), h) in frames {
            if !table.by_frame.contains_key(&(f, b, a)) {
                if let Ok(inv) = h.invert() {
                    table.by_frame.insert((f, b, a), inv);
                }
            }
        }
        Ok(table)
    }

    pub fn load_annotations(&self) -> Result<Vec<GroundTruthBox>, DatasetError> {
        load_annotations(self.annotations_path())
    }
}

impl FrameSource for DatasetManifest {
    fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.clone()
    }

    fn load(&self, view: ViewId, frame: FrameId) -> Result<ImageBuffer, DatasetError> {
        let path = self.frame_path(view, frame);
        read_png(&path).map_err(|source| DatasetError::Image { path, source })
    }
}

/// Reads and validates a manifest file, or `manifest.json` inside a directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = read_text(&path)?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    m.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    m.validate()?;
    Ok(m)
}

/// Writes `manifest.json` into `manifest.root`.
pub fn save_manifest(manifest: &DatasetManifest) -> Result<PathBuf, DatasetError> {
    let path = manifest.root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<T: std::str::FromStr>(
    path: &Path,
    line_no: usize,
    line: &str,
    names: &[&str],
) -> Result<Vec<T>, DatasetError>
where
    T::Err: std::fmt::Display,
{
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != names.len() {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {} fields, found {}", names.len(), cols.len()),
        });
    }
    cols.iter()
        .zip(names)
        .map(|(c, name)| {
            c.parse::<T>().map_err(|e| DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("field {name} ({c:?}): {e}"),
            })
        })
        .collect()
}

/// Parses `view,frame,person,xmin,ymin,xmax,ymax` rows.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<GroundTruthBox>, DatasetError> {
    const NAMES: [&str; 7] = ["view", "frame", "person", "xmin", "ymin", "xmax", "ymax"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line_no, line) in data_lines(text) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != NAMES.len() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 7 fields, found {}", cols.len()),
            });
        }
        let ids: Vec<u32> = parse_fields(path, line_no, &cols[..3].join(","), &NAMES[..3])?;
        let c: Vec<f64> = parse_fields(path, line_no, &cols[3..].join(","), &NAMES[3..])?;
        let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|_| DatasetError::InvalidBox {
            path: path.to_path_buf(),
            line: line_no,
            xmin: c[0],
            ymin: c[1],
            xmax: c[2],
            ymax: c[3],
        })?;
        if !seen.insert((ids[0], ids[1], ids[2])) {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "person {} annotated twice in view {}, frame {}",
                    ids[2], ids[0], ids[1]
                ),
            });
        }
        out.push(GroundTruthBox {
            view_id: ids[0],
            frame_id: ids[1],
            person_id: ids[2],
            bbox,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>, DatasetError> {
    let path = path.as_ref();
    parse_annotations(&read_text(path)?, path)
}

pub fn format_annotations(gts: &[GroundTruthBox]) -> String {
    let mut out = String::from("# view,frame,person,xmin,ymin,xmax,ymax\n");
    for g in gts {
        let b = g.bbox;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.view_id, g.frame_id, g.person_id, b.xmin, b.ymin, b.xmax, b.ymax
        );
    }
    out
}

pub fn save_annotations(
    path: impl AsRef<Path>,
    gts: &[GroundTruthBox],
) -> Result<(), DatasetError> {
    write_text(path.as_ref(), &format_annotations(gts))
}

/// Parses `x_ref,y_ref,x_dst,y_dst` rows; at least four are required.
pub fn parse_correspondences(text: &str, path: &Path) -> Result<Vec<Correspondence>, DatasetError> {
    const NAMES: [&str; 4] = ["x_ref", "y_ref", "x_dst", "y_dst"];
    let mut out = Vec::new();
    for (line_no, line) in data_lines(text) {
        let v: Vec<f64> = parse_fields(path, line_no, line, &NAMES)?;
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("field {} is not finite", NAMES[k]),
            });
        }
        out.push(Correspondence {
            reference: Point2::new(v[0], v[1]),
            destination: Point2::new(v[2], v[3]),
        });
    }
    if out.len() < 4 {
        return Err(DatasetError::TooFewPoints {
            path: path.to_path_buf(),
            count: out.len(),
        });
    }
    Ok(out)
}

pub fn load_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>, DatasetError> {
    let path = path.as_ref();
    parse_correspondences(&read_text(path)?, path)
}

pub fn format_correspondences(corrs: &[Correspondence]) -> String {
    let mut out = String::from("# x_ref,y_ref,x_dst,y_dst\n");
    for c in corrs {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.reference.x, c.reference.y, c.destination.x, c.destination.y
        );
    }
    out
}

pub fn save_correspondences(
    path: impl AsRef<Path>,
    corrs: &[Correspondence],
) -> Result<(), DatasetError> {
    write_text(path.as_ref(), &format_correspondences(corrs))
}

/// Desk-scale multi-view rig: view 1 is rendered directly, every other view is
/// a perspective warp of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRigSpec {
    pub n_views: u32,
    pub n_frames: u32,
    pub persons_per_frame: u32,
    pub width: usize,
    pub height: usize,
    /// Row-major view 1 → view k+2 homographies, one per extra view.
    #[serde(default)]
    pub homographies: Vec<[f64; 9]>,
    #[serde(default = "default_template_seed")]
    pub template_seed: u64,
    /// Persons sit on a grid of this pitch so the toy detector sees them exactly.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Minimum spacing between persons, in grid cells.
    #[serde(default = "default_spacing")]
    pub spacing: usize,
    #[serde(default = "default_background")]
    pub background: f64,
    /// Amplitude of uniform background noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_template_seed() -> u64 {
    ToyDetectorSpec::DEFAULT_SEED
}
fn default_grid() -> usize {
    ToyDetectorSpec::DEFAULT_STRIDE
}
fn default_spacing() -> usize {
    3
}
fn default_background() -> f64 {
    0.05
}
fn default_noise() -> f64 {
    0.02
}

/// Grid points used for correspondences: 6 × 3 = 18 points.
const CORR_COLS: usize = 6;
const CORR_ROWS: usize = 3;

impl SyntheticRigSpec {
    /// Three 128×96 views, 20 frames, three persons per frame. The two extra
    /// views are mild perspective distortions of near-grid translations.
    pub fn sample() -> Self {
        Self {
            n_views: 3,
            n_frames: 20,
            persons_per_frame: 3,
            width: 128,
            height: 96,
            homographies: vec![
                [1.0, 0.003, 8.0, 0.002, 1.0, 0.0, 1.5e-5, 0.0, 1.0],
                [1.0, -0.002, -8.0, 0.0, 1.0, 8.0, 0.0, 2e-5, 1.0],
            ],
            template_seed: default_template_seed(),
            grid: default_grid(),
            spacing: default_spacing(),
            background: default_background(),
            noise: default_noise(),
            seed: 0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn destination_homographies(&self) -> Result<Vec<Homography>, DatasetError> {
        self.homographies
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let wrap = |e: GeometryError| {
                    DatasetError::InvalidSpec(format!("homography for view {}: {e}", k + 2))
                };
                let h = Homography::from_matrix(*m).map_err(wrap)?;
                h.invert().map_err(wrap)?;
                Ok(h)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.n_views == 0 || self.n_frames == 0 {
            return bad("n_views and n_frames must be positive".into());
        }
        if self.homographies.len() != self.n_views as usize - 1 {
            return bad(format!(
                "{} views need {} homographies, found {}",
                self.n_views,
                self.n_views - 1,
                self.homographies.len()
            ));
        }
        if self.grid == 0 || self.spacing == 0 {
            return bad("grid and spacing must be positive".into());
        }
        let size = crate::detector::TEMPLATE_SIZE;
        if self.width < size || self.height < size {
            return bad(format!("frame must be at least {size}x{size}"));
        }
        if !(0.0..=1.0).contains(&self.background)
            || !(self.noise >= 0.0 && self.background + self.noise <= 1.0)
        {
            return bad("background and noise must keep pixels within [0, 1]".into());
        }
        let slots = self.slots();
        if (self.persons_per_frame as usize) > self.max_persons(&slots) {
            return bad(format!(
                "{} persons per frame do not fit a {}x{} frame at spacing {}",
                self.persons_per_frame, self.width, self.height, self.spacing
            ));
        }
        self.destination_homographies()?;
        Ok(())
    }

    /// Candidate top-left corners in grid units.
    fn slots(&self) -> Vec<(usize, usize)> {
        let size = crate::detector::TEMPLATE_SIZE;
        let nx = (self.width - size) / self.grid + 1;
        let ny = (self.height - size) / self.grid + 1;
        let mut out = Vec::new();
        for gy in 0..ny {
            for gx in 0..nx {
                out.push((gx, gy));
            }
        }
        out
    }

    /// Persons that always fit when placed greedily in row-major order.
    fn max_persons(&self, slots: &[(usize, usize)]) -> usize {
        let nx = slots.iter().map(|s| s.0).max().map_or(0, |m| m + 1);
        let ny = slots.iter().map(|s| s.1).max().map_or(0, |m| m + 1);
        nx.div_ceil(self.spacing) * ny.div_ceil(self.spacing)
    }
}

fn far_enough(a: (usize, usize), b: (usize, usize), spacing: usize) -> bool {
    a.0.abs_diff(b.0) >= spacing || a.1.abs_diff(b.1) >= spacing
}

/// Renders the rig into `out_dir` and returns its validated manifest.
pub fn generate_synthetic_rig(
    spec: &SyntheticRigSpec,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, DatasetError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let template = ToyDetectorSpec::from_seed(spec.template_seed).template_image();
    let size = crate::detector::TEMPLATE_SIZE;
    let dst_h = spec.destination_homographies()?;
    let slots = spec.slots();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let views: Vec<ViewId> = (1..=spec.n_views).collect();
    let frames: Vec<FrameId> = (0..spec.n_frames).collect();
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        views: views.clone(),
        frames: frames.clone(),
        frame_pattern: DEFAULT_FRAME_PATTERN.into(),
        annotations: PathBuf::from("annotations.csv"),
        correspondences: (2..=spec.n_views)
            .map(|v| CorrespondenceEntry {
                ref_view: 1,
                dst_view: v,
                path: PathBuf::from(format!("corr_1_{v}.csv")),
                frame: None,
            })
            .collect(),
        view_set: Some(ViewSetConfig {
            reference_view: 1,
            destination_views: (2..=spec.n_views).collect(),
        }),
    };

    let mut gts = Vec::new();
    for &f in &frames {
        // Persons: random grid slots, pairwise separated.
        let mut order = slots.clone();
        order.shuffle(&mut rng);
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for s in order {
            if chosen.len() == spec.persons_per_frame as usize {
                break;
            }
            if chosen.iter().all(|c| far_enough(*c, s, spec.spacing)) {
                chosen.push(s);
            }
        }
        if chosen.len() < spec.persons_per_frame as usize {
            // Random order can strand slots; row-major greedy always fits.
            chosen.clear();
            for &s in &slots {
                if chosen.len() < spec.persons_per_frame as usize
                    && chosen.iter().all(|c| far_enough(*c, s, spec.spacing))
                {
                    chosen.push(s);
                }
            }
        }

        let noise: Vec<f64> = (0..spec.width * spec.height)
            .map(|_| spec.background + spec.noise * rng.gen::<f64>())
            .collect();
        let mut frame = ImageBuffer::from_fn(spec.width, spec.height, |x, y| {
            [noise[y * spec.width + x]; 3]
        })
        .map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
        let mut boxes = Vec::new();
        for (pid, &(gx, gy)) in chosen.iter().enumerate() {
            let (x0, y0) = (gx * spec.grid, gy * spec.grid);
            for v in 0..size {
                for u in 0..size {
                    frame.set(x0 + u, y0 + v, template.get(u, v));
                }
            }
            let bbox = BBox::new(x0 as f64, y0 as f64, (x0 + size) as f64, (y0 + size) as f64)
                .expect("grid box is valid");
            boxes.push((pid as u32, bbox));
            gts.push(GroundTruthBox {
                view_id: 1,
                frame_id: f,
                person_id: pid as u32,
                bbox,
            });
        }
        write_frame(&manifest.frame_path(1, f), &frame)?;

        for (k, h) in dst_h.iter().enumerate() {
            let view = k as u32 + 2;
            let (warped, _) = warp_image(&frame, h, spec.width, spec.height).map_err(|source| {
                DatasetError::Image {
                    path: manifest.frame_path(view, f),
                    source,
                }
            })?;
            write_frame(&manifest.frame_path(view, f), &warped)?;
            for &(pid, bbox) in &boxes {
                let Some(hull) = projected_hull(&bbox, h) else {
                    continue;
                };
                let inside = hull.xmin >= 0.0
                    && hull.ymin >= 0.0
                    && hull.xmax <= spec.width as f64
                    && hull.ymax <= spec.height as f64;
                if inside {
                    gts.push(GroundTruthBox {
                        view_id: view,
                        frame_id: f,
                        person_id: pid,
                        bbox: hull,
                    });
                }
            }
        }
    }
    gts.sort_by_key(|g| (g.view_id, g.frame_id, g.person_id));
    save_annotations(manifest.annotations_path(), &gts)?;

    for (k, h) in dst_h.iter().enumerate() {
        let corrs = grid_correspondences(h, spec.width, spec.height)?;
        save_correspondences(out_dir.join(&manifest.correspondences[k].path), &corrs)?;
    }
    save_manifest(&manifest)?;
    load_manifest(out_dir)
}

fn write_frame(path: &Path, img: &ImageBuffer) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_png(path, img).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Axis-aligned hull of the projected box corners.
pub fn projected_hull(bbox: &BBox, h: &Homography) -> Option<BBox> {
    let pts: Option<Vec<Point2>> = bbox.corners().iter().map(|p| h.apply(*p).ok()).collect();
    BBox::hull(&pts?).ok()
}

fn grid_correspondences(
    h: &Homography,
    width: usize,
    height: usize,
) -> Result<Vec<Correspondence>, DatasetError> {
    let mut out = Vec::with_capacity(CORR_COLS * CORR_ROWS);
    for r in 0..CORR_ROWS {
        for c in 0..CORR_COLS {
            let x = (c as f64 + 0.5) / CORR_COLS as f64 * width as f64;
            let y = (r as f64 + 0.5) / CORR_ROWS as f64 * height as f64;
            let reference = Point2::new(x, y);
            let destination = h.apply(reference).map_err(|e| {
                DatasetError::InvalidSpec(format!("correspondence at ({x}, {y}): {e}"))
            })?;
            out.push(Correspondence {
                reference,
                destination,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_line_format() {
        let gts =
            parse_annotations("# header\n\n1,0,7,100,50,160,260\n", Path::new("a.csv")).unwrap();
        assert_eq!(
            gts,
            vec![GroundTruthBox {
                view_id: 1,
                frame_id: 0,
                person_id: 7,
                bbox: BBox::new(100.0, 50.0, 160.0, 260.0).unwrap(),
            }]
        );
    }

    #[test]
    fn inverted_box_names_the_line() {
        let err = parse_annotations(
            "1,0,7,100,50,160,260\n1,0,8,160,50,100,260\n",
            Path::new("a.csv"),
        )
        .unwrap_err();
        assert!(
            matches!(err, DatasetError::InvalidBox { line: 2, .. }),
            "{err}"
        );
        assert!(err.to_string().starts_with("a.csv:2:"));
    }

    #[test]
    fn malformed_fields_name_the_field() {
        let err = parse_annotations("1,0,x,1,2,3,4\n", Path::new("a.csv")).unwrap_err();
        assert!(err.to_string().contains("person"), "{err}");
        let err = parse_annotations("1,0,2,1,2,3\n", Path::new("a.csv")).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
    }

    #[test]
    fn correspondence_counts() {
        let four = "0,0,1,1\n1,0,2,1\n1,1,2,2\n0,1,1,2\n";
        assert_eq!(
            parse_correspondences(four, Path::new("c")).unwrap().len(),
            4
        );
        let three = "# x\n0,0,1,1\n1,0,2,1\n1,1,2,2\n";
        assert!(matches!(
            parse_correspondences(three, Path::new("c")),
            Err(DatasetError::TooFewPoints { count: 3, .. })
        ));
        assert!(matches!(
            parse_correspondences("0,0,1,nan\n1,0,2,1\n1,1,2,2\n0,1,1,2\n", Path::new("c")),
            Err(DatasetError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn view_set_validation() {
        let ok = ViewSetConfig {
            reference_view: 1,
            destination_views: vec![4, 6, 7],
        };
        ok.validate(&[1, 2, 3, 4, 5, 6, 7]).unwrap();
        let self_ref = ViewSetConfig {
            reference_view: 1,
            destination_views: vec![1],
        };
        assert!(self_ref.validate(&[1, 2]).is_err());
        assert!(ok.validate(&[1, 4, 6]).is_err());
    }
}
