//! Image-to-features extraction, batch AU detection, and the session-level
//! good-news/bad-news analysis.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Point2};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::features::{
    hog, summarize_sessions, FeatureError, FeatureVector, GrayImage, HogConfig, PcaModel, Provenance, SummaryStat,
};
use crate::fexdata::{AuVector, FexError, FexRow, FexTable, AU_NAMES};
use crate::geometry::{face_hull, face_mask, fit_similarity, GeometryError, LandmarkSet, BROW_RAISE_FACTOR};
use crate::learn::{
    fit_logistic, leave_one_group_out, predict_proba, HogMeta, HyperParams, LearnError, LogisticParams, ModelKind,
    TrainedModel,
};
use crate::stats::{ttest_ind, StatsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("crop {crop} is not a positive multiple of the {cell}px HOG cell")]
    BadCrop { crop: usize, cell: usize },
    #[error("model configuration mismatch: {0}")]
    ModelConfigMismatch(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("conditions: {0}")]
    Conditions(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Fex(#[from] FexError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    /// Side of the square aligned crop in pixels.
    pub crop: usize,
    pub hog: HogConfig,
    pub pca_retain: f64,
    pub include_landmarks: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { crop: 112, hog: HogConfig::default(), pca_retain: 0.95, include_landmarks: true }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.crop == 0 || self.hog.cell == 0 || !self.crop.is_multiple_of(self.hog.cell) {
            return Err(PipelineError::BadCrop { crop: self.crop, cell: self.hog.cell });
        }
        Ok(())
    }

    pub fn meta(&self) -> HogMeta {
        HogMeta { config: self.hog, crop: self.crop, include_landmarks: self.include_landmarks }
    }

    pub fn from_meta(meta: &HogMeta) -> Self {
        Self { crop: meta.crop, hog: meta.config, include_landmarks: meta.include_landmarks, ..Self::default() }
    }
}

/// Free border, in pixels, between the masked face and the crop edge.
pub const CROP_MARGIN: f64 = 4.0;

/// The neutral template scaled and centered so that its face hull (with
/// raised brows) fits inside a `crop x crop` square less [`CROP_MARGIN`].
pub fn crop_template(crop: usize) -> Result<LandmarkSet, PipelineError> {
    let t = LandmarkSet::neutral_template();
    let hull = face_hull(&t, BROW_RAISE_FACTOR)?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &hull {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let c = crop as f64;
    let scale = (c - 2.0 * CROP_MARGIN) / (x1 - x0).max(y1 - y0);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    Ok(t.map(|p| Point2::new(scale * (p.x - cx) + c / 2.0, scale * (p.y - cy) + c / 2.0))?)
}

/// Aligned crop and landmarks for one face.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
}

/// Similarity-aligns `lm` onto [`crop_template`] and warps `img` into the
/// crop by inverse mapping with bilinear sampling (edges clamped).
pub fn align_face(img: &GrayImage, lm: &LandmarkSet, crop: usize) -> Result<AlignedFace, PipelineError> {
    let target = crop_template(crop)?;
    let fit = fit_similarity(lm, &target)?;
    let inv = fit.transform.inverse();
    let image = GrayImage::from_fn(crop, crop, |c, r| {
        let src = inv.apply(Point2::new(c as f64, r as f64));
        img.sample_bilinear(src.x, src.y)
    });
    Ok(AlignedFace { image, landmarks: fit.transform.apply_landmarks(lm) })
}

/// Aligned crop -> face mask -> HOG -> optional PCA -> optional aligned
/// landmark coordinates appended.
pub fn extract_features(
    img: &GrayImage,
    lm: &LandmarkSet,
    cfg: &ExtractionConfig,
    pca: Option<&PcaModel>,
) -> Result<FeatureVector, PipelineError> {
    cfg.validate()?;
    let aligned = align_face(img, lm, cfg.crop)?;
    let mask = face_mask(&aligned.landmarks, cfg.crop, cfg.crop)?;
    let mut values = hog(&aligned.image, Some(&mask), &cfg.hog)?.values;
    if let Some(p) = pca {
        values = p.transform_one(&values)?;
    }
    if cfg.include_landmarks {
        values.extend(aligned.landmarks.to_flat());
    }
    let provenance = match (pca.is_some(), cfg.include_landmarks) {
        (false, false) => Provenance::Hog,
        (true, false) => Provenance::HogPca,
        (false, true) => Provenance::LandmarksHog,
        (true, true) => Provenance::LandmarksHogPca,
    };
    Ok(FeatureVector::new(values, provenance))
}

/// [`extract_features`] over a batch in parallel; output order matches input.
pub fn extract_batch(
    items: &[(GrayImage, LandmarkSet)],
    cfg: &ExtractionConfig,
    pca: Option<&PcaModel>,
) -> Result<Vec<FeatureVector>, PipelineError> {
    items.par_iter().map(|(img, lm)| extract_features(img, lm, cfg, pca)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceInput {
    pub frame: u64,
    pub time_s: f64,
    pub session: String,
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
}

/// One Fex row per input with the 20 AU scores (NaN for AUs without a
/// model). Every model must carry the same extraction metadata; features
/// are extracted once per input without PCA and each model applies its own.
pub fn detect_aus(inputs: &[FaceInput], models: &BTreeMap<String, TrainedModel>) -> Result<FexTable, PipelineError> {
    let mut meta: Option<HogMeta> = None;
    let mut slots: Vec<(usize, &TrainedModel)> = Vec::new();
    for (name, model) in models {
        let idx = crate::fexdata::au_index(name)
            .ok_or_else(|| PipelineError::ModelConfigMismatch(format!("'{name}' is not an AU name")))?;
        if model.labels.len() != 2 {
            return Err(PipelineError::ModelConfigMismatch(format!("{name} model is not binary")));
        }
        let m = model
            .hog
            .ok_or_else(|| PipelineError::ModelConfigMismatch(format!("{name} model has no extraction metadata")))?;
        match meta {
            None => meta = Some(m),
            Some(prev) if prev != m => {
                return Err(PipelineError::ModelConfigMismatch(format!(
                    "{name} model uses a different extraction setup"
                )))
            }
            _ => {}
        }
        slots.push((idx, model));
    }
    let Some(meta) = meta else {
        let rows = inputs.iter().map(|f| face_row(f, AuVector([f64::NAN; 20]))).collect();
        return Ok(FexTable::from_rows(rows)?);
    };
    let cfg = ExtractionConfig::from_meta(&meta);
    let feats: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|f| extract_features(&f.image, &f.landmarks, &cfg, None).map(|v| v.values))
        .collect::<Result<_, _>>()?;
    let mut aus = vec![AuVector([f64::NAN; 20]); inputs.len()];
    if !inputs.is_empty() {
        let d = feats[0].len();
        let x = DMatrix::from_row_iterator(inputs.len(), d, feats.iter().flatten().copied());
        for (idx, model) in slots {
            let p = predict_proba(model, &x)?;
            for (i, a) in aus.iter_mut().enumerate() {
                a.0[idx] = p[(i, 1)];
            }
        }
    }
    let rows = inputs.iter().zip(aus).map(|(f, a)| face_row(f, a)).collect();
    Ok(FexTable::from_rows(rows)?)
}

fn face_row(f: &FaceInput, aus: AuVector) -> FexRow {
    let mut row = FexRow::new(f.frame, f.time_s);
    row.session = f.session.clone();
    row.landmarks = Some(f.landmarks.clone());
    row.aus = Some(aus);
    row
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuTest {
    pub feature: String,
    pub mean_positive: Option<f64>,
    pub mean_negative: Option<f64>,
    /// `None` when the test is undefined (too few values or zero variance).
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionPrediction {
    pub session: String,
    pub condition: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub positive_condition: String,
    pub negative_condition: String,
    pub sessions_positive: usize,
    pub sessions_negative: usize,
    pub ttests: Vec<AuTest>,
    pub logo_accuracy: f64,
    pub predictions: Vec<SessionPrediction>,
    /// All-data logistic weights, one per AU in schema order.
    pub coefficients: Vec<Coefficient>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub feature: String,
    pub weight: f64,
}

/// L2 strength of the session-level logistic classifier.
pub const REPLICATION_L2: f64 = 1e-2;

fn nan_mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.filter(|x| !x.is_nan()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-session AU means compared across two conditions. The condition
/// names are sorted and the second is the positive class. Sessions absent
/// from `conditions` are skipped; missing AU means are imputed with the
/// column mean (0 when the whole column is missing) before classification.
pub fn replicate_goodnews(
    table: &FexTable,
    conditions: &[(String, String)],
    seed: u64,
) -> Result<ReplicationReport, PipelineError> {
    let cond_of: BTreeMap<&str, &str> = conditions.iter().map(|(s, c)| (s.as_str(), c.as_str())).collect();
    let mut names: Vec<&str> = cond_of.values().copied().collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != 2 {
        return Err(PipelineError::Conditions(format!("expected exactly two conditions, found {}", names.len())));
    }
    let (neg_name, pos_name) = (names[0], names[1]);

    let means = summarize_sessions(table, SummaryStat::Mean);
    let mut sessions = Vec::new();
    let mut y = Vec::new();
    let mut rows: Vec<[f64; 20]> = Vec::new();
    for row in means.rows() {
        let Some(&c) = cond_of.get(row.session.as_str()) else {
            continue;
        };
        sessions.push(row.session.clone());
        y.push((c == pos_name) as usize);
        rows.push(row.aus.map_or([f64::NAN; 20], |a| a.0));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Err(PipelineError::TooFewSamples(format!(
            "need at least two sessions per condition, got {n_pos} {pos_name} and {n_neg} {neg_name}"
        )));
    }

    let ttests = (0..AU_NAMES.len())
        .map(|j| {
            let pos: Vec<f64> = rows.iter().zip(&y).filter(|(_, &c)| c == 1).map(|(r, _)| r[j]).collect();
            let neg: Vec<f64> = rows.iter().zip(&y).filter(|(_, &c)| c == 0).map(|(r, _)| r[j]).collect();
            let test = ttest_ind(&pos, &neg).ok();
            AuTest {
                feature: AU_NAMES[j].to_string(),
                mean_positive: nan_mean(pos.iter().copied()),
                mean_negative: nan_mean(neg.iter().copied()),
                t: test.map(|r| r.t),
                df: test.map(|r| r.df),
                p: test.map(|r| r.p),
            }
        })
        .collect();

    let n = rows.len();
    let mut x = DMatrix::zeros(n, AU_NAMES.len());
    for j in 0..AU_NAMES.len() {
        let fill = nan_mean(rows.iter().map(|r| r[j])).unwrap_or(0.0);
        for i in 0..n {
            x[(i, j)] = if rows[i][j].is_nan() { fill } else { rows[i][j] };
        }
    }
    let labels = vec![neg_name.to_string(), pos_name.to_string()];
    let hp = HyperParams { l2: REPLICATION_L2, max_iter: 2000, tol: 1e-8, seed, ..HyperParams::default() };
    let logo = leave_one_group_out(&x, &y, &sessions, &labels, ModelKind::Logistic, &hp)?;
    let yb: Vec<bool> = y.iter().map(|&v| v == 1).collect();
    let fit = fit_logistic(&x, &yb, &LogisticParams { l2: hp.l2, max_iter: hp.max_iter, tol: hp.tol })?;

    Ok(ReplicationReport {
        positive_condition: pos_name.to_string(),
        negative_condition: neg_name.to_string(),
        sessions_positive: n_pos,
        sessions_negative: n_neg,
        ttests,
        logo_accuracy: logo.accuracy,
        predictions: sessions
            .iter()
            .zip(&y)
            .zip(&logo.predictions)
            .map(|((s, &t), &p)| SessionPrediction {
                session: s.clone(),
                condition: labels[t].clone(),
                predicted: labels[p].clone(),
            })
            .collect(),
        coefficients: AU_NAMES
            .iter()
            .zip(&fit.model.weights)
            .map(|(n, &weight)| Coefficient { feature: n.to_string(), weight })
            .collect(),
        intercept: fit.model.bias,
    })
}

impl ReplicationReport {
    /// The session-level classifier as a binary logistic model over AUs.
    pub fn classifier(&self) -> TrainedModel {
        use crate::learn::{BinaryClassifier, LinearModel, ModelParams};
        TrainedModel::new(
            ModelKind::Logistic,
            vec![self.negative_condition.clone(), self.positive_condition.clone()],
            ModelParams::Classifiers(vec![BinaryClassifier::Linear(LinearModel {
                weights: self.coefficients.iter().map(|c| c.weight).collect(),
                bias: self.intercept,
            })]),
        )
    }

    pub fn test(&self, au: &str) -> Option<&AuTest> {
        self.ttests.iter().find(|t| t.feature == au)
    }
}
