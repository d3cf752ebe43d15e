//! Procedural fixtures: AU displacement fields on the neutral template,
//! rendered face images, the visualization training set, and Fex tables
//! for the good-news/bad-news session analysis.
//!
//! Everything here is a pure function of its arguments and seed, so
//! fixtures can be regenerated byte-for-byte.

use nalgebra::{DMatrix, Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::features::GrayImage;
use crate::fexdata::{AuVector, FexRow, FexTable, AU_NAMES};
use crate::geometry::{convex_hull, hull_contains, LandmarkSet, SimilarityTransform, LANDMARK_COUNT};
use crate::learn::{fit_pls, LearnError, TrainedModel};
use crate::render::STROKES;

/// `(landmark, dx, dy)` triples per AU, in template units (interocular
/// distance 100, y down). Order follows `AU_NAMES`.
const AU_FIELDS: [&[(usize, f64, f64)]; 20] = [
    // AU01 inner brow raiser
    &[(19, 0.0, -2.0), (20, 0.0, -5.0), (21, 0.0, -8.0), (22, 0.0, -8.0), (23, 0.0, -5.0), (24, 0.0, -2.0)],
    // AU02 outer brow raiser
    &[(17, 0.0, -7.0), (18, 0.0, -5.0), (19, 0.0, -3.0), (24, 0.0, -3.0), (25, 0.0, -5.0), (26, 0.0, -7.0)],
    // AU04 brow lowerer
    &[(19, 0.0, 5.0), (20, 2.0, 5.0), (21, 3.0, 5.0), (22, -3.0, 5.0), (23, -2.0, 5.0), (24, 0.0, 5.0)],
    // AU05 upper lid raiser
    &[(37, 0.0, -3.0), (38, 0.0, -3.0), (43, 0.0, -3.0), (44, 0.0, -3.0), (19, 0.0, -1.0), (24, 0.0, -1.0)],
    // AU06 cheek raiser
    &[
        (1, 0.0, -2.0),
        (2, 0.0, -2.0),
        (14, 0.0, -2.0),
        (15, 0.0, -2.0),
        (40, 0.0, -2.0),
        (41, 0.0, -2.0),
        (46, 0.0, -2.0),
        (47, 0.0, -2.0),
    ],
    // AU07 lid tightener
    &[
        (37, 0.0, 1.0),
        (38, 0.0, 1.0),
        (43, 0.0, 1.0),
        (44, 0.0, 1.0),
        (40, 0.0, -3.0),
        (41, 0.0, -3.0),
        (46, 0.0, -3.0),
        (47, 0.0, -3.0),
    ],
    // AU09 nose wrinkler
    &[
        (27, 0.0, 2.0),
        (28, 0.0, 2.0),
        (31, -1.0, -3.0),
        (32, 0.0, -2.0),
        (33, 0.0, -2.0),
        (34, 0.0, -2.0),
        (35, 1.0, -3.0),
    ],
    // AU10 upper lip raiser
    &[
        (49, 0.0, -4.0),
        (50, 0.0, -4.0),
        (51, 0.0, -4.0),
        (52, 0.0, -4.0),
        (53, 0.0, -4.0),
        (61, 0.0, -3.0),
        (62, 0.0, -3.0),
        (63, 0.0, -3.0),
    ],
    // AU12 lip corner puller
    &[
        (48, -6.0, -6.0),
        (54, 6.0, -6.0),
        (60, -4.0, -4.0),
        (64, 4.0, -4.0),
        (49, 0.0, -2.0),
        (53, 0.0, -2.0),
        (55, 0.0, -2.0),
        (59, 0.0, -2.0),
    ],
    // AU14 dimpler
    &[(48, -4.0, 0.0), (54, 4.0, 0.0), (60, -3.0, 0.0), (64, 3.0, 0.0)],
    // AU15 lip corner depressor
    &[(48, -1.0, 6.0), (54, 1.0, 6.0), (60, 0.0, 4.0), (64, 0.0, 4.0)],
    // AU17 chin raiser
    &[
        (6, 0.0, -4.0),
        (7, 0.0, -5.0),
        (8, 0.0, -6.0),
        (9, 0.0, -5.0),
        (10, 0.0, -4.0),
        (55, 0.0, -3.0),
        (56, 0.0, -3.0),
        (57, 0.0, -3.0),
        (58, 0.0, -3.0),
        (59, 0.0, -3.0),
        (65, 0.0, -2.0),
        (66, 0.0, -2.0),
        (67, 0.0, -2.0),
    ],
    // AU18 lip pucker
    &[(48, 6.0, 0.0), (54, -6.0, 0.0), (60, 4.0, 0.0), (64, -4.0, 0.0), (51, 0.0, -1.0), (57, 0.0, 1.0)],
    // AU20 lip stretcher
    &[(48, -7.0, 2.0), (54, 7.0, 2.0), (60, -5.0, 1.0), (64, 5.0, 1.0), (5, -2.0, 0.0), (11, 2.0, 0.0)],
    // AU23 lip tightener
    &[
        (49, 0.0, 2.0),
        (50, 0.0, 2.0),
        (51, 0.0, 2.0),
        (52, 0.0, 2.0),
        (53, 0.0, 2.0),
        (55, 0.0, -2.0),
        (56, 0.0, -2.0),
        (57, 0.0, -2.0),
        (58, 0.0, -2.0),
        (59, 0.0, -2.0),
    ],
    // AU24 lip pressor
    &[(50, 0.0, 3.0), (51, 0.0, 3.0), (52, 0.0, 3.0), (56, 0.0, -3.0), (57, 0.0, -3.0), (58, 0.0, -3.0)],
    // AU25 lips part
    &[
        (61, 0.0, -2.0),
        (62, 0.0, -2.0),
        (63, 0.0, -2.0),
        (65, 0.0, 4.0),
        (66, 0.0, 4.0),
        (67, 0.0, 4.0),
        (55, 0.0, 3.0),
        (56, 0.0, 3.0),
        (57, 0.0, 3.0),
        (58, 0.0, 3.0),
        (59, 0.0, 3.0),
    ],
    // AU26 jaw drop
    &[
        (4, 0.0, 6.0),
        (5, 0.0, 7.0),
        (6, 0.0, 8.0),
        (7, 0.0, 9.0),
        (8, 0.0, 10.0),
        (9, 0.0, 9.0),
        (10, 0.0, 8.0),
        (11, 0.0, 7.0),
        (12, 0.0, 6.0),
        (55, 0.0, 8.0),
        (56, 0.0, 8.0),
        (57, 0.0, 8.0),
        (58, 0.0, 8.0),
        (59, 0.0, 8.0),
        (65, 0.0, 6.0),
        (66, 0.0, 6.0),
        (67, 0.0, 6.0),
    ],
    // AU28 lip suck
    &[
        (48, 2.0, 0.0),
        (54, -2.0, 0.0),
        (50, 0.0, 3.0),
        (51, 0.0, 3.0),
        (52, 0.0, 3.0),
        (56, 0.0, -3.0),
        (57, 0.0, -3.0),
        (58, 0.0, -3.0),
        (61, 0.0, 2.0),
        (62, 0.0, 2.0),
        (63, 0.0, 2.0),
        (65, 0.0, -2.0),
        (66, 0.0, -2.0),
        (67, 0.0, -2.0),
    ],
    // AU43 eyes closed
    &[
        (37, 0.0, 7.0),
        (38, 0.0, 7.0),
        (43, 0.0, 7.0),
        (44, 0.0, 7.0),
        (40, 0.0, -1.0),
        (41, 0.0, -1.0),
        (46, 0.0, -1.0),
        (47, 0.0, -1.0),
    ],
];

/// Per-landmark displacement of one unit of AU `au` (index into `AU_NAMES`).
pub fn au_displacement(au: usize) -> Vec<Vector2<f64>> {
    let mut d = vec![Vector2::zeros(); LANDMARK_COUNT];
    for &(i, dx, dy) in AU_FIELDS[au] {
        d[i] = Vector2::new(dx, dy);
    }
    d
}

/// Neutral template plus the AU-weighted sum of displacement fields. NaN
/// activations count as zero.
pub fn expression_landmarks(aus: &AuVector) -> LandmarkSet {
    let neutral = LandmarkSet::neutral_template();
    let mut pts: Vec<Point2<f64>> = neutral.points().to_vec();
    for (au, &a) in aus.0.iter().enumerate() {
        if a.is_nan() || a == 0.0 {
            continue;
        }
        for &(i, dx, dy) in AU_FIELDS[au] {
            pts[i] += Vector2::new(dx, dy) * a;
        }
    }
    LandmarkSet::new(pts).expect("68 points")
}

/// `(X, Y)` with `n` random AU vectors (`n x 20`, each entry active with
/// probability 0.3 and then uniform in [0, 1]) and their flattened
/// expression landmarks (`n x 136`).
pub fn viz_training_set(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, AU_NAMES.len());
    let mut y = DMatrix::zeros(n, 2 * LANDMARK_COUNT);
    for r in 0..n {
        let mut aus = AuVector::zeros();
        for a in aus.0.iter_mut() {
            if rng.random_bool(0.3) {
                *a = rng.random::<f64>();
            }
        }
        for (j, &a) in aus.0.iter().enumerate() {
            x[(r, j)] = a;
        }
        for (j, v) in expression_landmarks(&aus).to_flat().into_iter().enumerate() {
            y[(r, j)] = v;
        }
    }
    (x, y)
}

/// Twenty-component PLS from AU activations to template landmarks, fitted
/// on 400 samples of [`viz_training_set`].
pub fn train_viz_model(seed: u64) -> Result<TrainedModel, LearnError> {
    let (x, y) = viz_training_set(400, seed);
    let mut model = fit_pls(&x, &y, AU_NAMES.len())?;
    model.labels =
        (0..LANDMARK_COUNT).map(|i| format!("x_{i}")).chain((0..LANDMARK_COUNT).map(|i| format!("y_{i}"))).collect();
    Ok(model)
}

const BACKGROUND: f64 = 0.95;
const SKIN: f64 = 0.75;
const INK: f64 = 0.1;
/// Stroke half-width in pixels.
const HALF_WIDTH: f64 = 0.9;

fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Renders the sketch strokes of `lm` (pixel coordinates) as anti-aliased
/// dark lines over a flat face region on a light background.
pub fn face_image(lm: &LandmarkSet, width: usize, height: usize) -> GrayImage {
    let hull = convex_hull(lm.points()).ok();
    let mut segments = Vec::new();
    for stroke in STROKES {
        for run in stroke.runs {
            let idx: Vec<usize> = run.clone().collect();
            for w in idx.windows(2) {
                segments.push((lm.point(w[0]), lm.point(w[1])));
            }
            if stroke.closed {
                segments.push((lm.point(*idx.last().unwrap()), lm.point(idx[0])));
            }
        }
    }
    GrayImage::from_fn(width, height, |col, row| {
        let p = Point2::new(col as f64, row as f64);
        let base = match &hull {
            Some(h) if hull_contains(h, p) => SKIN,
            _ => BACKGROUND,
        };
        let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
        let coverage = (HALF_WIDTH + 0.5 - d).clamp(0.0, 1.0);
        base + (INK - base) * coverage
    })
}

/// Places template-space landmarks into an image: scale, rotation (radians)
/// about the template origin, then translation.
pub fn place(lm: &LandmarkSet, scale: f64, rotation: f64, center: (f64, f64)) -> LandmarkSet {
    SimilarityTransform::new(scale, rotation, Vector2::new(center.0, center.1)).apply_landmarks(lm)
}

/// A face with the given AUs, randomly posed inside a `size x size` image.
/// Returns the image and its pixel-space landmarks.
pub fn posed_face(aus: &AuVector, size: usize, rng: &mut impl Rng) -> (GrayImage, LandmarkSet) {
    let s = size as f64;
    let scale = s / 260.0 * rng.random_range(0.9..1.1);
    let rotation = rng.random_range(-0.12..0.12);
    let center = (s / 2.0 + rng.random_range(-3.0..3.0), s / 2.0 + rng.random_range(-3.0..3.0));
    let lm = place(&expression_landmarks(aus), scale, rotation, center);
    (face_image(&lm, size, size), lm)
}

/// Session-level Fex table plus `(session, condition)` pairs.
#[derive(Debug, Clone)]
pub struct SessionFixture {
    pub table: FexTable,
    pub conditions: Vec<(String, String)>,
}

const FIXTURE_FRAMES: usize = 30;
const FIXTURE_RATE: f64 = 30.0;

fn fixture_table(sessions: &[(String, String)], seed: u64, elevated: impl Fn(&str, usize) -> bool) -> FexTable {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sessions.len() * FIXTURE_FRAMES);
    for (session, condition) in sessions {
        for f in 0..FIXTURE_FRAMES {
            let mut row = FexRow::new(f as u64, f as f64 / FIXTURE_RATE);
            row.session = session.clone();
            let mut aus = AuVector::zeros();
            for (j, a) in aus.0.iter_mut().enumerate() {
                let lo = if elevated(condition, j) { 0.7 } else { 0.1 };
                *a = rng.random_range(lo..lo + 0.2);
            }
            row.aus = Some(aus);
            rows.push(row);
        }
    }
    FexTable::from_rows(rows).expect("fixture rows are valid")
}

fn fixture_sessions(per_condition: usize) -> Vec<(String, String)> {
    (0..2 * per_condition)
        .map(|i| {
            let cond = if i < per_condition { "good" } else { "bad" };
            (format!("clip{:02}", i + 1), cond.to_string())
        })
        .collect()
}

/// `per_condition` clips each of "good" (AU12 and AU17 elevated) and "bad"
/// (AU01 elevated) news, 30 frames per clip. Per-frame activations are
/// uniform on a 0.2-wide interval starting at 0.1 (baseline) or 0.7
/// (elevated), so clip means differ by far more than five within-class
/// standard deviations.
pub fn goodnews_fixture(per_condition: usize, seed: u64) -> SessionFixture {
    let au01 = crate::fexdata::au_index("AU01").unwrap();
    let au12 = crate::fexdata::au_index("AU12").unwrap();
    let au17 = crate::fexdata::au_index("AU17").unwrap();
    let conditions = fixture_sessions(per_condition);
    let table = fixture_table(&conditions, seed, |cond, j| match cond {
        "good" => j == au12 || j == au17,
        _ => j == au01,
    });
    SessionFixture { table, conditions }
}

/// Same layout as [`goodnews_fixture`] with both conditions drawn from one
/// distribution.
pub fn null_fixture(per_condition: usize, seed: u64) -> SessionFixture {
    let conditions = fixture_sessions(per_condition);
    let table = fixture_table(&conditions, seed, |_, _| false);
    SessionFixture { table, conditions }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn au12_lifts_mouth_corners() {
        let mut aus = AuVector::zeros();
        aus.set("AU12", 1.0);
        let lm = expression_landmarks(&aus);
        let n = LandmarkSet::neutral_template();
        assert!(lm.point(48).y < n.point(48).y);
        assert!(lm.point(54).y < n.point(54).y);
        assert_eq!(expression_landmarks(&AuVector::zeros()), n);
    }

    #[test]
    fn fields_are_linearly_independent() {
        let m = DMatrix::from_fn(20, 136, |a, j| {
            let d = au_displacement(a);
            if j < 68 {
                d[j].x
            } else {
                d[j - 68].y
            }
        });
        let sv = m.singular_values();
        assert!(sv.min() > 1e-3 * sv.max());
    }

    #[test]
    fn face_image_has_ink_on_strokes() {
        let lm = place(&LandmarkSet::neutral_template(), 0.5, 0.0, (64.0, 64.0));
        let img = face_image(&lm, 128, 128);
        let p = lm.point(8);
        assert!(img.get(p.x.round() as usize, p.y.round() as usize) < 0.5);
        assert_eq!(img.get(0, 0), BACKGROUND);
    }

    #[test]
    fn fixtures_are_seeded() {
        let a = goodnews_fixture(3, 9);
        let b = goodnews_fixture(3, 9);
        assert_eq!(a.table, b.table);
        assert_eq!(a.table.len(), 6 * FIXTURE_FRAMES);
        assert_eq!(a.conditions[0], ("clip01".to_string(), "good".to_string()));
    }
}
