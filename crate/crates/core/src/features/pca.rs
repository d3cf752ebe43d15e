use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Principal axes fitted by SVD of the centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PcaRepr", try_from = "PcaRepr")]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `k x d`, orthonormal rows.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PcaRepr {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

impl From<PcaModel> for PcaRepr {
    fn from(m: PcaModel) -> Self {
        PcaRepr {
            mean: m.mean.iter().copied().collect(),
            components: m.components.row_iter().map(|r| r.iter().copied().collect()).collect(),
            explained_variance: m.explained_variance,
            explained_variance_ratio: m.explained_variance_ratio,
        }
    }
}

impl TryFrom<PcaRepr> for PcaModel {
    type Error = String;
    fn try_from(r: PcaRepr) -> Result<Self, Self::Error> {
        let d = r.mean.len();
        let k = r.components.len();
        if r.components.iter().any(|c| c.len() != d) {
            return Err("pca component length differs from mean length".into());
        }
        if r.explained_variance.len() != k || r.explained_variance_ratio.len() != k {
            return Err("pca variance vectors must have one entry per component".into());
        }
        let components = DMatrix::from_row_iterator(k, d, r.components.into_iter().flatten());
        Ok(PcaModel {
            mean: DVector::from_vec(r.mean),
            components,
            explained_variance: r.explained_variance,
            explained_variance_ratio: r.explained_variance_ratio,
        })
    }
}

/// Fits the smallest number of components whose cumulative explained
/// variance ratio reaches `retain`.
pub fn fit_pca(x: &DMatrix<f64>, retain: f64) -> Result<PcaModel, FeatureError> {
    if !(retain > 0.0 && retain <= 1.0) {
        return Err(FeatureError::BadRetain(retain));
    }
    let (n, d) = x.shape();
    if n < 2 {
        return Err(FeatureError::TooFewSamples { needed: 2, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let sq: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = sq.iter().sum();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if total <= (f64::EPSILON * scale).powi(2) * (n * d) as f64 {
        return Err(FeatureError::RankZero);
    }

    let mut k = 0;
    let mut cum = 0.0;
    while k < sq.len() {
        cum += sq[k] / total;
        k += 1;
        if cum >= retain - 1e-12 {
            break;
        }
    }

    let mut components = DMatrix::zeros(k, d);
    for (row, &i) in order.iter().take(k).enumerate() {
        let mut comp: RowDVector<f64> = v_t.row(i).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let pivot = comp.iter().enumerate().fold(
            (0, 0.0f64),
            |best, (j, &v)| {
                if v.abs() > best.1.abs() {
                    (j, v)
                } else {
                    best
                }
            },
        );
        if pivot.1 < 0.0 {
            comp.neg_mut();
        }
        components.set_row(row, &comp);
    }
    let explained_variance = sq[..k].iter().map(|s| s / (n - 1) as f64).collect();
    let explained_variance_ratio = sq[..k].iter().map(|s| s / total).collect();
    Ok(PcaModel { mean, components, explained_variance, explained_variance_ratio })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    /// `(X - mean) * components^T`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, FeatureError> {
        if x.ncols() != self.n_features() {
            return Err(FeatureError::DimensionMismatch { expected: self.n_features(), got: x.ncols() });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    pub fn transform_one(&self, v: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let m = DMatrix::from_row_slice(1, v.len(), v);
        Ok(self.transform(&m)?.iter().copied().collect())
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, FeatureError> {
        if z.ncols() != self.n_components() {
            return Err(FeatureError::DimensionMismatch { expected: self.n_components(), got: z.ncols() });
        }
        let mut x = z * &self.components;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(x)
    }
}
