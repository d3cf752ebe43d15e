//! Trainable models and cross-validation.
//!
//! Class labels are indices into a model's `labels`. Two labels give a
//! single binary classifier (index 1 is the positive class); more labels are
//! handled one-vs-rest, with prediction by argmax and ties going to the
//! lower index.

mod cv;
mod forest;
mod logistic;
mod model;
mod pls;
mod svm;

use thiserror::Error;

use crate::features::FeatureError;

pub use cv::{
    grid_search_cv, leave_one_group_out, stratified_folds, CvPlan, Grid, GridCell, GridSearchResult, LogoResult,
};
pub use forest::{train_forest, Forest, ForestParams, Node, Tree};
pub use logistic::{
    fit_logistic, logistic_gradient, logistic_objective, sigmoid, train_logistic, LogisticFit, LogisticParams,
};
pub use model::{
    predict, predict_proba, train, BinaryClassifier, HogMeta, HyperParams, LinearModel, ModelKind, ModelParams,
    PlsParams, TrainedModel, MODEL_VERSION,
};
pub use pls::fit_pls;
pub use svm::{fit_svm, svm_objective, train_svm, SvmParams};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("leave-one-group-out needs at least two groups")]
    SingleGroup,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("operation not supported for {0} models")]
    WrongKind(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Row-major `Vec<Vec<f64>>` serde adapter for `DMatrix`.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows): (usize, Vec<Vec<f64>>) = Deserialize::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}
