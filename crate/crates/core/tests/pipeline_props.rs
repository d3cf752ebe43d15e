use std::collections::BTreeMap;
use std::sync::OnceLock;

use fexkit::features::{fit_pca, GrayImage};
use fexkit::fexdata::{au_index, AuVector};
use fexkit::geometry::{face_hull, fit_similarity, LandmarkSet, SimilarityTransform, BROW_RAISE_FACTOR};
use fexkit::learn::{predict_proba, train, HyperParams, ModelKind, TrainedModel};
use fexkit::pipeline::{crop_template, detect_aus, extract_features, replicate_goodnews, ExtractionConfig, FaceInput};
use fexkit::synth::{expression_landmarks, face_image, null_fixture, place, posed_face};
use nalgebra::{DMatrix, Point2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const SIZE: usize = 200;

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm
}

fn smile(level: f64) -> AuVector {
    let mut aus = AuVector::zeros();
    aus.set("AU12", level);
    aus.set("AU06", level * 0.8);
    aus
}

/// Posed faces with a balanced AU12 label.
fn faces(n: usize, seed: u64) -> (Vec<(GrayImage, LandmarkSet)>, Vec<usize>) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let items =
        labels.iter().map(|&l| posed_face(&smile(l as f64 * rng.random_range(0.6..1.0)), SIZE, &mut rng)).collect();
    (items, labels)
}

fn feature_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flatten().copied())
}

struct Detectors {
    inputs: Vec<FaceInput>,
    plain: TrainedModel,
    with_pca: TrainedModel,
}

fn detectors() -> &'static Detectors {
    static D: OnceLock<Detectors> = OnceLock::new();
    D.get_or_init(|| {
        let cfg = ExtractionConfig::default();
        let (items, y) = faces(24, 5);
        let raw: Vec<Vec<f64>> =
            items.iter().map(|(img, lm)| extract_features(img, lm, &cfg, None).unwrap().values).collect();
        let labels = vec!["0".to_string(), "1".to_string()];
        let hp = HyperParams::default();

        let mut plain = train(ModelKind::Logistic, &feature_matrix(&raw), &y, &labels, &hp).unwrap();
        plain.hog = Some(cfg.meta());

        let hog_len = raw[0].len() - 136;
        let hog_part = DMatrix::from_fn(raw.len(), hog_len, |i, j| raw[i][j]);
        let pca = fit_pca(&hog_part, 0.9).unwrap();
        let reduced: Vec<Vec<f64>> =
            items.iter().map(|(img, lm)| extract_features(img, lm, &cfg, Some(&pca)).unwrap().values).collect();
        let mut with_pca = train(ModelKind::Logistic, &feature_matrix(&reduced), &y, &labels, &hp).unwrap();
        with_pca.pca = Some(pca);
        with_pca.hog = Some(cfg.meta());

        let inputs = items
            .into_iter()
            .enumerate()
            .map(|(i, (image, landmarks))| FaceInput {
                frame: i as u64,
                time_s: i as f64 / 30.0,
                session: "s".into(),
                image,
                landmarks,
            })
            .collect();
        Detectors { inputs, plain, with_pca }
    })
}

/// Band-limited face: Gaussian blobs at the template-space landmarks,
/// evaluated exactly at every pixel through `t`.
fn blob_image(face: &LandmarkSet, t: &SimilarityTransform) -> GrayImage {
    let inv = t.inverse();
    GrayImage::from_fn(SIZE, SIZE, |x, y| {
        let p = inv.apply(Point2::new(x as f64, y as f64));
        let v: f64 = face.points().iter().map(|q| (-(p - q).norm_squared() / 72.0).exp()).sum();
        v.min(4.0) / 4.0
    })
}

/// Point inside a CCW convex polygon, borders included.
fn inside(poly: &[Point2<f64>], p: Point2<f64>) -> bool {
    (0..poly.len()).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        (b - a).perp(&(p - a)) >= 0.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn features_survive_a_joint_similarity(
        level in 0.0..1.0f64, s in 0.8..1.2f64, r in -0.4..0.4f64, dx in -10.0..10.0f64, dy in -10.0..10.0f64,
    ) {
        let face = expression_landmarks(&smile(level));
        let base_scale = SIZE as f64 / 260.0;
        let c = SIZE as f64 / 2.0;
        let a = place(&face, base_scale, 0.0, (c, c));
        let b = place(&face, base_scale * s, r, (c + dx, c + dy));
        let cfg = ExtractionConfig::default();
        let fa = extract_features(&face_image(&a, SIZE, SIZE), &a, &cfg, None).unwrap().values;
        let fb = extract_features(&face_image(&b, SIZE, SIZE), &b, &cfg, None).unwrap().values;
        let err = relative_error(&fa, &fb);
        prop_assert!(err <= 0.02, "relative error {err}");
    }

    #[test]
    fn hog_of_smooth_faces_survives_a_joint_similarity(
        level in 0.0..1.0f64, s in 0.9..1.1f64, r in -0.4..0.4f64, dx in -10.0..10.0f64, dy in -10.0..10.0f64,
    ) {
        let face = expression_landmarks(&smile(level));
        let c = SIZE as f64 / 2.0;
        let base = SimilarityTransform::new(SIZE as f64 / 260.0, 0.0, Vector2::new(c, c));
        let moved = SimilarityTransform::new(SIZE as f64 / 260.0 * s, r, Vector2::new(c + dx, c + dy));
        let cfg = ExtractionConfig::default();
        let hog_part = |t: &SimilarityTransform| {
            let mut v = extract_features(&blob_image(&face, t), &t.apply_landmarks(&face), &cfg, None).unwrap().values;
            v.truncate(v.len() - 136);
            v
        };
        let err = relative_error(&hog_part(&base), &hog_part(&moved));
        prop_assert!(err <= 0.02, "relative hog error {err}");
    }

    #[test]
    fn pixels_outside_the_face_are_ignored(seed in any::<u64>()) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let (img, lm) = posed_face(&smile(rng.random_range(0.0..1.0)), SIZE, &mut rng);
        let cfg = ExtractionConfig::default();
        // hull in crop space, grown about its centroid so bilinear and
        // gradient neighbourhoods of masked pixels stay untouched
        let to_crop = fit_similarity(&lm, &crop_template(cfg.crop).unwrap()).unwrap().transform;
        let hull = face_hull(&to_crop.apply_landmarks(&lm), BROW_RAISE_FACTOR).unwrap();
        let centroid = hull.iter().fold(Point2::origin(), |acc: Point2<f64>, p| acc + p.coords / hull.len() as f64);
        let grown: Vec<Point2<f64>> = hull.iter().map(|p| centroid + (p - centroid) * 1.15).collect();
        let noise: Vec<f64> = (0..SIZE * SIZE).map(|_| rng.random()).collect();
        let scrambled = GrayImage::from_fn(SIZE, SIZE, |x, y| {
            if inside(&grown, to_crop.apply(Point2::new(x as f64, y as f64))) { img.get(x, y) } else { noise[y * SIZE + x] }
        });
        prop_assert_ne!(&scrambled, &img);
        let fa = extract_features(&img, &lm, &cfg, None).unwrap();
        let fb = extract_features(&scrambled, &lm, &cfg, None).unwrap();
        prop_assert_eq!(fa.values, fb.values);
    }
}

#[test]
fn detect_aus_composes_extraction_and_scoring() {
    let d = detectors();
    let cfg = ExtractionConfig::default();
    let raw: Vec<Vec<f64>> =
        d.inputs.iter().map(|f| extract_features(&f.image, &f.landmarks, &cfg, None).unwrap().values).collect();
    let want = predict_proba(&d.plain, &feature_matrix(&raw)).unwrap();
    let table = detect_aus(&d.inputs, &BTreeMap::from([("AU12".to_string(), d.plain.clone())])).unwrap();
    assert_eq!(table.len(), d.inputs.len());
    let au12 = au_index("AU12").unwrap();
    for (i, row) in table.rows().iter().enumerate() {
        let aus = row.aus.as_ref().unwrap();
        for (j, v) in aus.0.iter().enumerate() {
            if j == au12 {
                assert!((0.0..=1.0).contains(v));
                assert_eq!(*v, want[(i, 1)]);
            } else {
                assert!(v.is_nan());
            }
        }
    }
}

#[test]
fn pca_detector_matches_reduced_features() {
    let d = detectors();
    let cfg = ExtractionConfig::default();
    let pca = d.with_pca.pca.as_ref().unwrap();
    let reduced: Vec<Vec<f64>> =
        d.inputs.iter().map(|f| extract_features(&f.image, &f.landmarks, &cfg, Some(pca)).unwrap().values).collect();
    assert!(reduced.iter().all(|v| v.len() == pca.n_components() + 136));
    let want = predict_proba(&d.with_pca, &feature_matrix(&reduced)).unwrap();
    let table = detect_aus(&d.inputs, &BTreeMap::from([("AU12".to_string(), d.with_pca.clone())])).unwrap();
    let au12 = au_index("AU12").unwrap();
    for (i, row) in table.rows().iter().enumerate() {
        let got = row.aus.as_ref().unwrap().0[au12];
        assert!((got - want[(i, 1)]).abs() <= 1e-12, "row {i}: {got} vs {}", want[(i, 1)]);
    }
}

#[test]
fn null_conditions_show_no_effect() {
    for seed in 0..8 {
        let fx = null_fixture(10, seed);
        let report = replicate_goodnews(&fx.table, &fx.conditions, seed).unwrap();
        assert_eq!((report.sessions_positive, report.sessions_negative), (10, 10));
        for test in &report.ttests {
            let Some(t) = test.t else { continue };
            assert!(t.abs() < 4.0, "seed {seed} {}: t = {t}", test.feature);
            assert_eq!(test.df, Some(18.0));
        }
    }
}
