//! Planar perspective transforms between camera views.
//!
//! A [`Homography`] maps pixel coordinates of a reference view to the
//! corresponding pixel of a destination view:
//!
//! ```text
//! x' = (h11 x + h12 y + h13) / w
//! y' = (h21 x + h22 y + h23) / w      w = h31 x + h32 y + 1
//! ```
//!
//! Estimation uses the normalized direct linear transform over four or more
//! curated point correspondences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominators (and determinants) at or below this magnitude are treated as zero.
pub const PROJECTIVE_EPS: f64 = 1e-12;

/// Smallest accepted ratio of smallest to largest singular value of the DLT design matrix.
pub const MIN_CONDITION_RATIO: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("at least 4 correspondences are required, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate correspondence configuration ({0})")]
    DegenerateConfiguration(String),
    #[error("point ({x}, {y}) maps to infinity")]
    AtInfinity { x: f64, y: f64 },
    #[error("homography is singular")]
    Singular,
    #[error("homography has a zero bottom-right entry and cannot be normalized")]
    Unnormalizable,
    #[error("non-finite coordinate or matrix entry")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A pair of pixels depicting the same scene point in two views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub reference: Point2,
    pub destination: Point2,
}

impl Correspondence {
    pub const fn new(reference: Point2, destination: Point2) -> Self {
        Self {
            reference,
            destination,
        }
    }
}

/// Row-major 3x3 projective transform with the bottom-right entry fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    m: [f64; 9],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };

    /// Builds a homography from any non-singular row-major matrix, rescaling it so
    /// that the bottom-right entry is exactly 1.
    pub fn from_matrix(m: [f64; 9]) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if m[8].abs() <= PROJECTIVE_EPS {
            return Err(GeometryError::Unnormalizable);
        }
        let s = m[8];
        let mut n = m.map(|v| v / s);
        n[8] = 1.0;
        if det3(&n).abs() <= PROJECTIVE_EPS {
            return Err(GeometryError::Singular);
        }
        Ok(Self { m: n })
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0],
        }
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.m
    }

    /// Entry at (row, col), zero-based.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.m[row * 3 + col]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    /// Maps a point, failing when it lies on the line sent to infinity.
    pub fn apply(&self, p: Point2) -> Result<Point2, GeometryError> {
        let m = &self.m;
        let w = m[6] * p.x + m[7] * p.y + m[8];
        if !(w.abs() > PROJECTIVE_EPS) {
            return Err(GeometryError::AtInfinity { x: p.x, y: p.y });
        }
        Ok(Point2 {
            x: (m[0] * p.x + m[1] * p.y + m[2]) / w,
            y: (m[3] * p.x + m[4] * p.y + m[5]) / w,
        })
    }

    /// Projective denominator of `p` under this transform.
    pub fn denominator(&self, p: Point2) -> f64 {
        self.m[6] * p.x + self.m[7] * p.y + self.m[8]
    }

    pub fn invert(&self) -> Result<Self, GeometryError> {
        let m = &self.m;
        let det = det3(m);
        if det.abs() <= PROJECTIVE_EPS || !det.is_finite() {
            return Err(GeometryError::Singular);
        }
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        // The adjugate is the inverse up to scale; from_matrix rescales anyway.
        Self::from_matrix(adj)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        let a = &self.m;
        let b = &other.m;
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
            }
        }
        Self::from_matrix(out)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    h.apply(p)
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: impl Iterator<Item = Point2> + Clone) -> Option<[f64; 9]> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some([s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0])
}

fn similarity_apply(t: &[f64; 9], p: Point2) -> Point2 {
    Point2 {
        x: t[0] * p.x + t[2],
        y: t[4] * p.y + t[5],
    }
}

fn similarity_inverse(t: &[f64; 9]) -> [f64; 9] {
    let s = t[0];
    [
        1.0 / s,
        0.0,
        -t[2] / s,
        0.0,
        1.0 / s,
        -t[5] / s,
        0.0,
        0.0,
        1.0,
    ]
}

/// Estimates the homography mapping each `reference` point to its `destination`.
///
/// Four correspondences are solved exactly; more are fitted in the algebraic
/// least-squares sense. Coordinates are isotropically normalized on both sides
/// before the 2n×8 system is solved by SVD.
pub fn estimate_homography(
    correspondences: &[Correspondence],
) -> Result<Homography, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::TooFewPoints(n));
    }
    if correspondences
        .iter()
        .any(|c| !c.reference.is_finite() || !c.destination.is_finite())
    {
        return Err(GeometryError::NonFinite);
    }

    let t_ref =
        normalizing_transform(correspondences.iter().map(|c| c.reference)).ok_or_else(|| {
            GeometryError::DegenerateConfiguration("reference points coincide".into())
        })?;
    let t_dst =
        normalizing_transform(correspondences.iter().map(|c| c.destination)).ok_or_else(|| {
            GeometryError::DegenerateConfiguration("destination points coincide".into())
        })?;

    let mut a = DMatrix::<f64>::zeros(2 * n, 8);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (i, c) in correspondences.iter().enumerate() {
        let p = similarity_apply(&t_ref, c.reference);
        let q = similarity_apply(&t_dst, c.destination);
        let (r0, r1) = (2 * i, 2 * i + 1);
        a[(r0, 0)] = p.x;
        a[(r0, 1)] = p.y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -p.x * q.x;
        a[(r0, 7)] = -p.y * q.x;
        b[r0] = q.x;

        a[(r1, 3)] = p.x;
        a[(r1, 4)] = p.y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -p.x * q.y;
        a[(r1, 7)] = -p.y * q.y;
        b[r1] = q.y;
    }

    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(s_max > 0.0) || s_min / s_max < MIN_CONDITION_RATIO {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "singular value ratio {:.3e} below {:.0e}",
            if s_max > 0.0 { s_min / s_max } else { 0.0 },
            MIN_CONDITION_RATIO
        )));
    }
    let h = svd
        .solve(&b, 0.0)
        .map_err(|e| GeometryError::DegenerateConfiguration(e.to_string()))?;

    let normalized = [h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0];
    let full = mat_mul(&mat_mul(&similarity_inverse(&t_dst), &normalized), &t_ref);
    Homography::from_matrix(full).map_err(|e| match e {
        GeometryError::Singular | GeometryError::Unnormalizable => {
            GeometryError::DegenerateConfiguration(format!("estimated transform unusable: {e}"))
        }
        other => other,
    })
}

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    out
}

/// Root-mean-square and maximum reprojection error of `h` over the correspondences.
pub fn reprojection_error(h: &Homography, correspondences: &[Correspondence]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut max = 0.0_f64;
    for c in correspondences {
        let e = match h.apply(c.reference) {
            Ok(p) => p.distance(&c.destination),
            Err(_) => f64::INFINITY,
        };
        sq += e * e;
        max = max.max(e);
    }
    let rms = if correspondences.is_empty() {
        0.0
    } else {
        (sq / correspondences.len() as f64).sqrt()
    };
    (rms, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_to(dx: f64, dy: f64) -> Vec<Correspondence> {
        [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .map(|&(x, y)| Correspondence::new(Point2::new(x, y), Point2::new(x + dx, y + dy)))
            .collect()
    }

    #[test]
    fn unit_square_to_itself_is_identity() {
        let h = estimate_homography(&square_to(0.0, 0.0)).unwrap();
        for (a, b) in h.matrix().iter().zip(Homography::IDENTITY.matrix()) {
            assert!((a - b).abs() < 1e-12, "{h:?}");
        }
    }

    #[test]
    fn shifted_square_is_pure_translation() {
        let h = estimate_homography(&square_to(10.0, 5.0)).unwrap();
        let want = Homography::translation(10.0, 5.0);
        for (a, b) in h.matrix().iter().zip(want.matrix()) {
            assert!((a - b).abs() < 1e-10, "{h:?}");
        }
    }

    #[test]
    fn too_few_points() {
        let c = &square_to(1.0, 1.0)[..3];
        assert_eq!(estimate_homography(c), Err(GeometryError::TooFewPoints(3)));
    }

    #[test]
    fn collinear_reference_points_are_degenerate() {
        let c: Vec<_> = (0..4)
            .map(|i| {
                let t = i as f64;
                Correspondence::new(Point2::new(t, 2.0 * t), Point2::new(t * 3.0, t + 1.0))
            })
            .collect();
        assert!(matches!(
            estimate_homography(&c),
            Err(GeometryError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn identical_reference_points_are_degenerate() {
        let c: Vec<_> = (0..5)
            .map(|i| Correspondence::new(Point2::new(4.0, 4.0), Point2::new(i as f64, 1.0)))
            .collect();
        assert!(matches!(
            estimate_homography(&c),
            Err(GeometryError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn apply_examples() {
        let p = Homography::IDENTITY.apply(Point2::new(3.5, 7.25)).unwrap();
        assert_eq!(p, Point2::new(3.5, 7.25));
        let p = Homography::translation(10.0, 5.0)
            .apply(Point2::new(0.0, 0.0))
            .unwrap();
        assert_eq!(p, Point2::new(10.0, 5.0));
        let h = Homography::from_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.001, 0.0, 1.0]).unwrap();
        let p = h.apply(Point2::new(100.0, 0.0)).unwrap();
        assert!((p.x - 100.0 / 1.1).abs() < 1e-12);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn apply_on_horizon_line() {
        let h = Homography::from_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.01, 0.0, 1.0]).unwrap();
        assert!(matches!(
            h.apply(Point2::new(-100.0, 3.0)),
            Err(GeometryError::AtInfinity { .. })
        ));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Homography::IDENTITY.invert().unwrap(), Homography::IDENTITY);
        assert_eq!(
            Homography::translation(10.0, 5.0).invert().unwrap(),
            Homography::translation(-10.0, -5.0)
        );
    }

    #[test]
    fn singular_matrices_are_rejected() {
        assert_eq!(
            Homography::from_matrix([1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0]),
            Err(GeometryError::Singular)
        );
        assert_eq!(
            Homography::from_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            Err(GeometryError::Unnormalizable)
        );
    }

    #[test]
    fn compose_examples() {
        let h = Homography::from_matrix([1.1, 0.2, 3.0, -0.1, 0.9, 4.0, 1e-4, 2e-4, 1.0]).unwrap();
        assert_eq!(Homography::IDENTITY.compose(&h).unwrap(), h);
        let t = Homography::translation(1.0, 2.0)
            .compose(&Homography::translation(3.0, -5.0))
            .unwrap();
        assert_eq!(t, Homography::translation(4.0, -3.0));
        let id = h.compose(&h.invert().unwrap()).unwrap();
        for (a, b) in id.matrix().iter().zip(Homography::IDENTITY.matrix()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_holds_after_every_constructor() {
        let h = Homography::from_matrix([2.0, 0.0, 4.0, 0.0, 2.0, 6.0, 0.0, 0.002, 2.0]).unwrap();
        assert_eq!(h.get(2, 2), 1.0);
        assert_eq!(h.get(0, 2), 2.0);
        assert_eq!(h.invert().unwrap().get(2, 2), 1.0);
        assert_eq!(h.compose(&h).unwrap().get(2, 2), 1.0);
    }
}
