//! Landmark geometry on the 68-point iBUG scheme.
//!
//! Coordinates are image pixels with `y` growing downward. Point indices:
//! 0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LANDMARK_COUNT: usize = 68;

/// Outer eye corners used for the interocular distance.
pub const LEFT_EYE_OUTER: usize = 36;
pub const RIGHT_EYE_OUTER: usize = 45;

const NEUTRAL_TEMPLATE_CSV: &str = include_str!("../assets/neutral_template.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("expected {LANDMARK_COUNT} landmarks, got {0}")]
    WrongLandmarkCount(usize),
    #[error("landmark {0} is not finite")]
    NonFiniteLandmark(usize),
    #[error("degenerate face geometry: {0}")]
    DegenerateFace(&'static str),
    #[error("degenerate hull: points are collinear or fewer than three")]
    DegenerateHull,
    #[error("invalid face box: {0}")]
    InvalidFaceBox(&'static str),
    #[error("template parse error on line {line}: {message}")]
    Template { line: usize, message: String },
}

/// 68 facial landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point2<f64>>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self, GeometryError> {
        if points.len() != LANDMARK_COUNT {
            return Err(GeometryError::WrongLandmarkCount(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(GeometryError::NonFiniteLandmark(i));
        }
        Ok(Self { points })
    }

    /// Builds a set from the `x_0..x_67, y_0..y_67` column layout.
    pub fn from_flat(flat: &[f64]) -> Result<Self, GeometryError> {
        if flat.len() != 2 * LANDMARK_COUNT {
            return Err(GeometryError::WrongLandmarkCount(flat.len() / 2));
        }
        let points = (0..LANDMARK_COUNT).map(|i| Point2::new(flat[i], flat[LANDMARK_COUNT + i])).collect();
        Self::new(points)
    }

    /// Flattens to `x_0..x_67, y_0..y_67`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).chain(self.points.iter().map(|p| p.y)).collect()
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point2<f64> {
        self.points[i]
    }

    pub fn centroid(&self) -> Point2<f64> {
        let sum = self.points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords);
        Point2::from(sum / LANDMARK_COUNT as f64)
    }

    pub fn map(&self, f: impl Fn(Point2<f64>) -> Point2<f64>) -> Result<Self, GeometryError> {
        Self::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Largest per-point Euclidean distance to `other`.
    pub fn max_deviation(&self, other: &LandmarkSet) -> f64 {
        self.points.iter().zip(&other.points).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// The shipped neutral template: centered on its centroid, interocular distance 100 px.
    pub fn neutral_template() -> Self {
        parse_template(NEUTRAL_TEMPLATE_CSV).expect("bundled template is valid")
    }
}

/// Parses `x,y` lines (one per landmark) as in `neutral_template.csv`.
pub fn parse_template(text: &str) -> Result<LandmarkSet, GeometryError> {
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut coord = || -> Result<f64, GeometryError> {
            parts.next().and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| GeometryError::Template {
                line: i + 1,
                message: format!("expected `x,y`, got `{line}`"),
            })
        };
        let x = coord()?;
        let y = coord()?;
        points.push(Point2::new(x, y));
    }
    LandmarkSet::new(points)
}

/// Axis-aligned face box with detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    /// Detector confidence, NaN when unknown.
    pub score: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64, score: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(GeometryError::InvalidFaceBox("non-finite origin"));
        }
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GeometryError::InvalidFaceBox("width and height must be positive"));
        }
        Ok(Self { x, y, width, height, score })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Intersection over union (Jaccard similarity) of two boxes.
pub fn iou(a: &FaceBox, b: &FaceBox) -> f64 {
    let ix = (a.x + a.width).min(b.x + b.width) - a.x.max(b.x);
    let iy = (a.y + a.height).min(b.y + b.height) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn interocular_distance(lm: &LandmarkSet) -> Result<f64, GeometryError> {
    let d = (lm.point(LEFT_EYE_OUTER) - lm.point(RIGHT_EYE_OUTER)).norm();
    if d == 0.0 {
        return Err(GeometryError::DegenerateFace("coincident outer eye corners"));
    }
    Ok(d)
}

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Vector2<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: 0.0, translation: Vector2::zeros() }
    }

    pub fn new(scale: f64, rotation: f64, translation: Vector2<f64>) -> Self {
        Self { scale, rotation, translation }
    }

    pub fn apply(&self, p: Point2<f64>) -> Point2<f64> {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(
            self.scale * (c * p.x - s * p.y) + self.translation.x,
            self.scale * (s * p.x + c * p.y) + self.translation.y,
        )
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let (s, c) = (-self.rotation).sin_cos();
        let t = self.translation;
        Self {
            scale: inv_scale,
            rotation: -self.rotation,
            translation: Vector2::new(-inv_scale * (c * t.x - s * t.y), -inv_scale * (s * t.x + c * t.y)),
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        let t = self.apply(Point2::from(first.translation));
        Self { scale: self.scale * first.scale, rotation: self.rotation + first.rotation, translation: t.coords }
    }

    pub fn apply_landmarks(&self, lm: &LandmarkSet) -> LandmarkSet {
        LandmarkSet { points: lm.points.iter().map(|&p| self.apply(p)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFit {
    pub transform: SimilarityTransform,
    /// Sum of squared distances between transformed source and destination.
    pub residual: f64,
}

/// Closed-form least-squares similarity mapping `src` onto `dst`.
pub fn fit_similarity(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityFit, GeometryError> {
    fit_similarity_points(src.points(), dst.points())
}

pub fn fit_similarity_points(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<SimilarityFit, GeometryError> {
    assert_eq!(src.len(), dst.len(), "point sets must have equal length");
    let n = src.len() as f64;
    let mu_s = src.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let mu_d = dst.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;

    let (mut a, mut b, mut var_s) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let s = s.coords - mu_s;
        let d = d.coords - mu_d;
        a += s.x * d.x + s.y * d.y;
        b += s.x * d.y - s.y * d.x;
        var_s += s.norm_squared();
    }
    if var_s == 0.0 {
        return Err(GeometryError::DegenerateFace("source points have zero spread"));
    }
    let norm = a.hypot(b);
    if norm == 0.0 {
        return Err(GeometryError::DegenerateFace("no similarity with positive scale"));
    }
    let rotation = b.atan2(a);
    let scale = norm / var_s;
    let (sin, cos) = rotation.sin_cos();
    let rotated_mu = Vector2::new(cos * mu_s.x - sin * mu_s.y, sin * mu_s.x + cos * mu_s.y);
    let transform = SimilarityTransform::new(scale, rotation, mu_d - scale * rotated_mu);

    let residual = src.iter().zip(dst).map(|(s, d)| (transform.apply(*s) - d).norm_squared()).sum();
    Ok(SimilarityFit { transform, residual })
}

/// Maps `lm` onto `template` with the best-fitting similarity.
pub fn align_to_template(lm: &LandmarkSet, template: &LandmarkSet) -> Result<LandmarkSet, GeometryError> {
    let fit = fit_similarity(lm, template)?;
    Ok(fit.transform.apply_landmarks(lm))
}

fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain hull. Vertices are returned with positive signed area
/// (counter-clockwise in a y-up frame), starting from the lowest-x point,
/// with collinear boundary points dropped.
pub fn convex_hull(points: &[Point2<f64>]) -> Result<Vec<Point2<f64>>, GeometryError> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(GeometryError::DegenerateHull);
    }

    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(GeometryError::DegenerateHull);
    }
    Ok(hull)
}

/// Inside-or-on test for a hull produced by [`convex_hull`].
pub fn hull_contains(hull: &[Point2<f64>], p: Point2<f64>) -> bool {
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

/// Binary raster, row-major, `true` inside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Rasterizes a hull; pixel `(col, row)` has its center at `(col, row)`.
    pub fn from_hull(hull: &[Point2<f64>], width: usize, height: usize) -> Self {
        let mut data = vec![false; width * height];
        for row in 0..height {
            for col in 0..width {
                data[row * width + col] = hull_contains(hull, Point2::new(col as f64, row as f64));
            }
        }
        Self { width, height, data }
    }
}

/// Brow-to-upper-eyelid pairings: (brow indices, upper-lid indices).
const BROW_EYELID_SIDES: [(std::ops::RangeInclusive<usize>, [usize; 2]); 2] =
    [(17..=21, [37, 38]), (22..=26, [43, 44])];

/// Brow points raised by `factor` times the mean brow-to-upper-eyelid
/// vertical distance, computed per side.
pub fn raised_brows(lm: &LandmarkSet, factor: f64) -> Vec<Point2<f64>> {
    let mut out = Vec::with_capacity(10);
    for (brow, lids) in BROW_EYELID_SIDES.iter() {
        let lid_y = lids.iter().map(|&i| lm.point(i).y).sum::<f64>() / lids.len() as f64;
        let count = brow.clone().count() as f64;
        let d = brow.clone().map(|i| (lid_y - lm.point(i).y).abs()).sum::<f64>() / count;
        out.extend(brow.clone().map(|i| {
            let p = lm.point(i);
            Point2::new(p.x, p.y - factor * d)
        }));
    }
    out
}

/// Multiplier on the brow-to-eyelid distance used to extend the mask over the forehead.
pub const BROW_RAISE_FACTOR: f64 = 1.5;

/// Hull of all landmarks plus forehead-extended brows.
pub fn face_hull(lm: &LandmarkSet, brow_raise: f64) -> Result<Vec<Point2<f64>>, GeometryError> {
    let mut pts = lm.points().to_vec();
    if brow_raise != 0.0 {
        pts.extend(raised_brows(lm, brow_raise));
    }
    convex_hull(&pts)
}

/// Face mask of size `height x width` with brows raised 1.5x toward the forehead.
pub fn face_mask(lm: &LandmarkSet, width: usize, height: usize) -> Result<Mask, GeometryError> {
    let hull = face_hull(lm, BROW_RAISE_FACTOR)?;
    Ok(Mask::from_hull(&hull, width, height))
}
