//! Linear SVM via Pegasos stochastic subgradient steps on the regularized
//! hinge loss, with projection onto the `1/sqrt(l2)` ball and suffix
//! averaging over the second half of the iterates.
//!
//! With `fit_intercept` the bias is learned as the weight of an implicit
//! constant feature equal to 1, and is therefore regularized.
//!
//! Sample order: each epoch shuffles `0..n` with a Xoshiro256++ generator
//! seeded once from `seed`; the order never depends on the labels, so
//! flipping every label negates the solution exactly.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::logistic::validate_binary;
use super::model::{BinaryClassifier, LinearModel, ModelKind, ModelParams, TrainedModel};
use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub fit_intercept: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { l2: 1e-2, epochs: 50, seed: 0, fit_intercept: true }
    }
}

/// `l2 / 2 * (|w|^2 + b^2) + mean hinge`; the bias term is counted only
/// when it was learned as a feature.
pub fn svm_objective(x: &DMatrix<f64>, y: &[bool], model: &LinearModel, l2: f64, fit_intercept: bool) -> f64 {
    let w = DVector::from_column_slice(&model.weights);
    let margins = x * &w;
    let hinge: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| {
            let s = if yi { 1.0 } else { -1.0 };
            (1.0 - s * (m + model.bias)).max(0.0)
        })
        .sum::<f64>()
        / y.len() as f64;
    let reg = w.norm_squared() + if fit_intercept { model.bias * model.bias } else { 0.0 };
    0.5 * l2 * reg + hinge
}

pub fn fit_svm(x: &DMatrix<f64>, y: &[bool], p: &SvmParams) -> Result<LinearModel, LearnError> {
    validate_binary(x, y)?;
    if !(p.l2 > 0.0 && p.l2.is_finite()) {
        return Err(LearnError::InvalidParam(format!("svm l2 must be positive, got {}", p.l2)));
    }
    if p.epochs == 0 {
        return Err(LearnError::InvalidParam("svm epochs must be positive".into()));
    }
    let (n, d) = x.shape();
    let dim = d + p.fit_intercept as usize;
    // row-major copy with optional constant column
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = x.row(i).iter().copied().collect();
            if p.fit_intercept {
                r.push(1.0);
            }
            r
        })
        .collect();
    let signs: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();

    let radius = 1.0 / p.l2.sqrt();
    let total = p.epochs * n;
    let average_from = total / 2;
    let mut w = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    let mut averaged = 0usize;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(p.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;

    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (p.l2 * t as f64);
            let margin = signs[i] * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - eta * p.l2;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                let step = eta * signs[i];
                for (v, xi) in w.iter_mut().zip(&rows[i]) {
                    *v += step * xi;
                }
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
            if t > average_from {
                averaged += 1;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    let avg: Vec<f64> = avg.into_iter().map(|v| v / averaged as f64).collect();
    let (weights, bias) = if p.fit_intercept { (avg[..d].to_vec(), avg[d]) } else { (avg, 0.0) };
    Ok(LinearModel { weights, bias })
}

/// Binary linear SVM; labels are `["0", "1"]`. Scores from
/// `predict_proba` are clamped margins, not calibrated probabilities.
pub fn train_svm(x: &DMatrix<f64>, y: &[bool], l2: f64, epochs: usize, seed: u64) -> Result<TrainedModel, LearnError> {
    let model = fit_svm(x, y, &SvmParams { l2, epochs, seed, fit_intercept: true })?;
    Ok(TrainedModel::new(
        ModelKind::Svm,
        vec!["0".into(), "1".into()],
        ModelParams::Classifiers(vec![BinaryClassifier::Linear(model)]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (DMatrix<f64>, Vec<bool>) {
        let pts = [
            (2.0, 2.5, true),
            (3.0, 2.0, true),
            (2.5, 3.5, true),
            (3.5, 3.0, true),
            (-1.0, -0.5, false),
            (-2.0, -1.0, false),
            (-1.5, 0.0, false),
            (-0.5, -1.5, false),
        ];
        let x = DMatrix::from_row_iterator(pts.len(), 2, pts.iter().flat_map(|p| [p.0, p.1]));
        (x, pts.iter().map(|p| p.2).collect())
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs();
        let m = fit_svm(&x, &y, &SvmParams { l2: 1e-2, epochs: 200, seed: 7, fit_intercept: true }).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            let s = m.weights[0] * x[(i, 0)] + m.weights[1] * x[(i, 1)] + m.bias;
            assert_eq!(s > 0.0, yi);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, y) = blobs();
        let p = SvmParams { l2: 0.1, epochs: 20, seed: 3, fit_intercept: true };
        assert_eq!(fit_svm(&x, &y, &p).unwrap(), fit_svm(&x, &y, &p).unwrap());
    }

    #[test]
    fn rejects_nonpositive_l2() {
        let (x, y) = blobs();
        assert!(fit_svm(&x, &y, &SvmParams { l2: 0.0, ..Default::default() }).is_err());
    }
}
