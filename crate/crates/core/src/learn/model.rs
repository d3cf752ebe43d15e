//! The serializable model container shared by every learner.

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::forest::{fit_forest, Forest, ForestParams};
use super::logistic::{fit_logistic, sigmoid, LogisticParams};
use super::svm::{fit_svm, SvmParams};
use super::LearnError;
use crate::features::{HogConfig, PcaModel};
use crate::geometry::LANDMARK_COUNT;

pub const MODEL_VERSION: u32 = 1;

/// Bias used for a one-vs-rest member whose training labels were all on
/// one side; `sigmoid(30)` is within 1e-13 of 1.
const CONSTANT_BIAS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Svm,
    Forest,
    Pls,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Svm => "svm",
            ModelKind::Forest => "forest",
            ModelKind::Pls => "pls",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "svm" => Ok(ModelKind::Svm),
            "forest" => Ok(ModelKind::Forest),
            "pls" => Ok(ModelKind::Pls),
            other => Err(LearnError::InvalidParam(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BinaryClassifier {
    Linear(LinearModel),
    Forest(Forest),
}

impl BinaryClassifier {
    fn n_features(&self) -> usize {
        match self {
            BinaryClassifier::Linear(m) => m.weights.len(),
            BinaryClassifier::Forest(f) => f.n_features,
        }
    }

    /// Positive-class score in [0, 1].
    fn score(&self, kind: ModelKind, x: &[f64]) -> f64 {
        match self {
            BinaryClassifier::Linear(m) if kind == ModelKind::Svm => ((m.margin(x) + 1.0) / 2.0).clamp(0.0, 1.0),
            BinaryClassifier::Linear(m) => sigmoid(m.margin(x)),
            BinaryClassifier::Forest(f) => f.vote_fraction(x),
        }
    }
}

/// Fitted PLS regression. `predict(x) = x * coefficients + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsParams {
    pub k: usize,
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    /// `d x k`
    #[serde(with = "super::rows")]
    pub x_weights: DMatrix<f64>,
    /// `d x k`
    #[serde(with = "super::rows")]
    pub x_loadings: DMatrix<f64>,
    /// `m x k`
    #[serde(with = "super::rows")]
    pub y_loadings: DMatrix<f64>,
    /// `d x m`
    #[serde(with = "super::rows")]
    pub coefficients: DMatrix<f64>,
    pub intercept: Vec<f64>,
}

impl PlsParams {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, LearnError> {
        if x.ncols() != self.coefficients.nrows() {
            return Err(LearnError::DimensionMismatch { expected: self.coefficients.nrows(), got: x.ncols() });
        }
        let mut out = x * &self.coefficients;
        for mut row in out.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.intercept) {
                *v += b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelParams {
    /// One member for two labels, one per label (one-vs-rest) otherwise.
    Classifiers(Vec<BinaryClassifier>),
    Pls(PlsParams),
}

/// Feature-pipeline settings a model was trained behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogMeta {
    #[serde(flatten)]
    pub config: HogConfig,
    /// Side of the square aligned face crop in pixels.
    pub crop: usize,
    /// Whether aligned landmark coordinates follow the HOG part.
    pub include_landmarks: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub version: u32,
    pub kind: ModelKind,
    pub labels: Vec<String>,
    pub pca: Option<PcaModel>,
    pub hog: Option<HogMeta>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Repr {
    version: u32,
    kind: ModelKind,
    labels: Vec<String>,
    pca: Option<PcaModel>,
    hog: Option<HogMeta>,
    params: Value,
}

fn format_err(e: impl fmt::Display) -> LearnError {
    LearnError::Format(e.to_string())
}

impl TrainedModel {
    pub fn new(kind: ModelKind, labels: Vec<String>, params: ModelParams) -> Self {
        Self { version: MODEL_VERSION, kind, labels, pca: None, hog: None, params }
    }

    /// Column count the classifier or regressor itself consumes.
    pub fn input_dim(&self) -> usize {
        match &self.params {
            ModelParams::Classifiers(c) => c.first().map_or(0, |c| c.n_features()),
            ModelParams::Pls(p) => p.x_mean.len(),
        }
    }

    /// Column count of raw extractor output when a PCA stage is attached.
    pub fn raw_dim(&self) -> Option<usize> {
        let pca = self.pca.as_ref()?;
        let lm = self.hog.is_some_and(|h| h.include_landmarks) as usize * 2 * LANDMARK_COUNT;
        Some(pca.n_features() + lm)
    }

    /// Accepts either raw extractor output (projecting the HOG part through
    /// the attached PCA) or features already in the classifier's space.
    pub fn prepare<'a>(&self, x: &'a DMatrix<f64>) -> Result<Cow<'a, DMatrix<f64>>, LearnError> {
        let dim = self.input_dim();
        if let (Some(pca), Some(raw)) = (&self.pca, self.raw_dim()) {
            if x.ncols() == raw {
                let hog_part = x.columns(0, pca.n_features()).into_owned();
                let z = pca.transform(&hog_part)?;
                let tail = x.ncols() - pca.n_features();
                let mut out = DMatrix::zeros(x.nrows(), z.ncols() + tail);
                out.columns_mut(0, z.ncols()).copy_from(&z);
                out.columns_mut(z.ncols(), tail).copy_from(&x.columns(pca.n_features(), tail));
                return Ok(Cow::Owned(out));
            }
        }
        if x.ncols() == dim {
            Ok(Cow::Borrowed(x))
        } else {
            Err(LearnError::DimensionMismatch { expected: self.raw_dim().unwrap_or(dim), got: x.ncols() })
        }
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        let params = match &self.params {
            ModelParams::Classifiers(cs) => {
                let members: Result<Vec<Value>, _> = cs
                    .iter()
                    .map(|c| match c {
                        BinaryClassifier::Linear(m) => serde_json::to_value(m),
                        BinaryClassifier::Forest(f) => serde_json::to_value(f),
                    })
                    .collect();
                json!({ "classifiers": members.map_err(format_err)? })
            }
            ModelParams::Pls(p) => serde_json::to_value(p).map_err(format_err)?,
        };
        let repr = Repr {
            version: self.version,
            kind: self.kind,
            labels: self.labels.clone(),
            pca: self.pca.clone(),
            hog: self.hog,
            params,
        };
        serde_json::to_string_pretty(&repr).map_err(format_err)
    }

    pub fn from_json(s: &str) -> Result<Self, LearnError> {
        let repr: Repr = serde_json::from_str(s).map_err(format_err)?;
        if repr.version != MODEL_VERSION {
            return Err(LearnError::Format(format!("unsupported model version {}", repr.version)));
        }
        let params = match repr.kind {
            ModelKind::Pls => ModelParams::Pls(serde_json::from_value(repr.params).map_err(format_err)?),
            kind => {
                #[derive(Deserialize)]
                struct Members {
                    classifiers: Vec<Value>,
                }
                let m: Members = serde_json::from_value(repr.params).map_err(format_err)?;
                let cs: Result<Vec<BinaryClassifier>, _> = m
                    .classifiers
                    .into_iter()
                    .map(|v| {
                        if kind == ModelKind::Forest {
                            serde_json::from_value(v).map(BinaryClassifier::Forest)
                        } else {
                            serde_json::from_value(v).map(BinaryClassifier::Linear)
                        }
                    })
                    .collect();
                ModelParams::Classifiers(cs.map_err(format_err)?)
            }
        };
        let model = TrainedModel {
            version: repr.version,
            kind: repr.kind,
            labels: repr.labels,
            pca: repr.pca,
            hog: repr.hog,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), LearnError> {
        match &self.params {
            ModelParams::Classifiers(cs) => {
                let expected = if self.labels.len() == 2 { 1 } else { self.labels.len() };
                if self.labels.len() < 2 || cs.len() != expected {
                    return Err(LearnError::Format(format!(
                        "{} labels need {expected} classifiers, found {}",
                        self.labels.len(),
                        cs.len()
                    )));
                }
                let d = self.input_dim();
                if cs.iter().any(|c| c.n_features() != d) {
                    return Err(LearnError::Format("classifiers disagree on input dimension".into()));
                }
            }
            ModelParams::Pls(p) => {
                let (d, m) = p.coefficients.shape();
                if p.x_mean.len() != d || p.y_mean.len() != m || p.intercept.len() != m {
                    return Err(LearnError::Format("pls parameter shapes disagree".into()));
                }
            }
        }
        if let (Some(pca), ModelParams::Classifiers(_)) = (&self.pca, &self.params) {
            let lm = self.hog.is_some_and(|h| h.include_landmarks) as usize * 2 * LANDMARK_COUNT;
            if pca.n_components() + lm != self.input_dim() {
                return Err(LearnError::Format("pca output does not match classifier input".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| LearnError::Format(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let s = std::fs::read_to_string(path).map_err(|e| LearnError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// `x * B + b` for PLS models.
    pub fn regress(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, LearnError> {
        match &self.params {
            ModelParams::Pls(p) => p.predict(x),
            ModelParams::Classifiers(_) => Err(LearnError::WrongKind(self.kind.name())),
        }
    }
}

/// `n x labels` scores in [0, 1]. Two-label models give `[1 - p, p]`;
/// one-vs-rest models give each member's positive score. SVM scores are
/// clamped margins `(m + 1) / 2`, not probabilities.
pub fn predict_proba(model: &TrainedModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>, LearnError> {
    let ModelParams::Classifiers(cs) = &model.params else {
        return Err(LearnError::WrongKind(model.kind.name()));
    };
    let x = model.prepare(x)?;
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, model.labels.len());
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        if cs.len() == 1 && model.labels.len() == 2 {
            let p = cs[0].score(model.kind, &row);
            out[(i, 0)] = 1.0 - p;
            out[(i, 1)] = p;
        } else {
            for (j, c) in cs.iter().enumerate() {
                out[(i, j)] = c.score(model.kind, &row);
            }
        }
    }
    Ok(out)
}

/// Label index per row: argmax of [`predict_proba`], ties to the lower index.
pub fn predict(model: &TrainedModel, x: &DMatrix<f64>) -> Result<Vec<usize>, LearnError> {
    let p = predict_proba(model, x)?;
    Ok(p.row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Every tunable knob across the classifier kinds; each learner reads the
/// ones it uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub epochs: usize,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            max_iter: 500,
            tol: 1e-6,
            epochs: 50,
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

fn as_count(name: &str, v: f64) -> Result<usize, LearnError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(LearnError::InvalidParam(format!("{name} must be a non-negative integer, got {v}")))
    }
}

impl HyperParams {
    /// Sets one knob by name. `None` is accepted where a knob is optional
    /// (`max_depth`, `mtry`).
    pub fn set(&mut self, name: &str, value: Option<f64>) -> Result<(), LearnError> {
        let need = |v: Option<f64>| v.ok_or_else(|| LearnError::InvalidParam(format!("{name} cannot be null")));
        match name {
            "l2" => self.l2 = need(value)?,
            "tol" => self.tol = need(value)?,
            "max_iter" => self.max_iter = as_count(name, need(value)?)?,
            "epochs" => self.epochs = as_count(name, need(value)?)?,
            "n_trees" => self.n_trees = as_count(name, need(value)?)?,
            "min_leaf" => self.min_leaf = as_count(name, need(value)?)?,
            "max_depth" => self.max_depth = value.map(|v| as_count(name, v)).transpose()?,
            "mtry" => self.mtry = value.map(|v| as_count(name, v)).transpose()?,
            "bootstrap" => self.bootstrap = need(value)? != 0.0,
            other => return Err(LearnError::InvalidParam(format!("unknown hyperparameter '{other}'"))),
        }
        Ok(())
    }

    pub fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            mtry: self.mtry,
            bootstrap: self.bootstrap,
            seed: self.seed,
        }
    }
}

fn fit_binary(kind: ModelKind, x: &DMatrix<f64>, y: &[bool], hp: &HyperParams) -> Result<BinaryClassifier, LearnError> {
    match kind {
        ModelKind::Logistic => {
            let p = LogisticParams { l2: hp.l2, max_iter: hp.max_iter, tol: hp.tol };
            Ok(BinaryClassifier::Linear(fit_logistic(x, y, &p)?.model))
        }
        ModelKind::Svm => {
            let p = SvmParams { l2: hp.l2, epochs: hp.epochs, seed: hp.seed, fit_intercept: true };
            Ok(BinaryClassifier::Linear(fit_svm(x, y, &p)?))
        }
        ModelKind::Forest => Ok(BinaryClassifier::Forest(fit_forest(x, y, &hp.forest())?)),
        ModelKind::Pls => Err(LearnError::WrongKind("pls")),
    }
}

/// Trains a classifier over `labels`; `y` holds label indices. Two labels
/// train one binary model with index 1 positive, more train one-vs-rest.
/// A one-vs-rest member whose class is absent (or the only class) becomes
/// a constant scorer.
pub fn train(
    kind: ModelKind,
    x: &DMatrix<f64>,
    y: &[usize],
    labels: &[String],
    hp: &HyperParams,
) -> Result<TrainedModel, LearnError> {
    if labels.len() < 2 {
        return Err(LearnError::InvalidParam("at least two labels are required".into()));
    }
    if let Some(&bad) = y.iter().find(|&&v| v >= labels.len()) {
        return Err(LearnError::InvalidParam(format!("label index {bad} out of range")));
    }
    let members = if labels.len() == 2 {
        let yb: Vec<bool> = y.iter().map(|&v| v == 1).collect();
        vec![fit_binary(kind, x, &yb, hp)?]
    } else {
        let mut out = Vec::with_capacity(labels.len());
        for c in 0..labels.len() {
            let yb: Vec<bool> = y.iter().map(|&v| v == c).collect();
            let all = yb.iter().all(|&b| b);
            let none = yb.iter().all(|&b| !b);
            if (all || none) && kind != ModelKind::Forest {
                if x.nrows() != y.len() {
                    return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.len() });
                }
                let bias = match (kind, all) {
                    (ModelKind::Svm, true) => 1.0,
                    (ModelKind::Svm, false) => -1.0,
                    (_, true) => CONSTANT_BIAS,
                    (_, false) => -CONSTANT_BIAS,
                };
                out.push(BinaryClassifier::Linear(LinearModel { weights: vec![0.0; x.ncols()], bias }));
            } else {
                out.push(fit_binary(kind, x, &yb, hp)?);
            }
        }
        out
    };
    Ok(TrainedModel::new(kind, labels.to_vec(), ModelParams::Classifiers(members)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weights: Vec<f64>, bias: f64, kind: ModelKind) -> TrainedModel {
        TrainedModel::new(
            kind,
            vec!["0".into(), "1".into()],
            ModelParams::Classifiers(vec![BinaryClassifier::Linear(LinearModel { weights, bias })]),
        )
    }

    #[test]
    fn zero_logistic_is_half() {
        let m = linear(vec![0.0, 0.0], 0.0, ModelKind::Logistic);
        let p = predict_proba(&m, &DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 * 7.0)).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn svm_scores_are_clamped_margins() {
        let m = linear(vec![1.0], 0.0, ModelKind::Svm);
        let p = predict_proba(&m, &DMatrix::from_row_slice(3, 1, &[-5.0, 0.0, 0.5])).unwrap();
        assert_eq!(p.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5, 0.75]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = linear(vec![0.0, 0.0], 0.0, ModelKind::Logistic);
        assert!(matches!(
            predict_proba(&m, &DMatrix::zeros(1, 3)),
            Err(LearnError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = linear(vec![0.1, -2.5e-7], 1.0 / 3.0, ModelKind::Logistic);
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let s = m.to_json().unwrap();
        assert!(s.starts_with("{\n  \"version\": 1,\n  \"kind\": \"logistic\""));
    }

    #[test]
    fn hyperparams_by_name() {
        let mut hp = HyperParams::default();
        hp.set("max_depth", Some(8.0)).unwrap();
        hp.set("l2", Some(1e-4)).unwrap();
        assert_eq!(hp.max_depth, Some(8));
        hp.set("max_depth", None).unwrap();
        assert_eq!(hp.max_depth, None);
        assert!(hp.set("l2", None).is_err());
        assert!(hp.set("n_trees", Some(2.5)).is_err());
        assert!(hp.set("gamma", Some(1.0)).is_err());
    }

    #[test]
    fn one_vs_rest_with_absent_class() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 5.0, 5.1]);
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = train(ModelKind::Logistic, &x, &[0, 0, 1, 1], &labels, &HyperParams::default()).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        assert!(p.column(2).iter().all(|&v| v < 1e-12));
        assert_eq!(predict(&m, &x).unwrap(), vec![0, 0, 1, 1]);
    }
}
