//! L2-regularized logistic regression by full-batch gradient descent with
//! Armijo backtracking. The bias is not regularized.

use nalgebra::{DMatrix, DVector};

use super::model::{BinaryClassifier, LinearModel, ModelKind, ModelParams, TrainedModel};
use super::LearnError;

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { l2: 1e-2, max_iter: 500, tol: 1e-6 }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean log-loss plus `l2 / 2 * |w|^2`.
pub fn logistic_objective(x: &DMatrix<f64>, y: &[bool], w: &DVector<f64>, b: f64, l2: f64) -> f64 {
    let z = x * w;
    let loss: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let z = z + b;
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum();
    loss / y.len() as f64 + 0.5 * l2 * w.norm_squared()
}

/// Gradient of [`logistic_objective`] with respect to `(w, b)`.
pub fn logistic_gradient(x: &DMatrix<f64>, y: &[bool], w: &DVector<f64>, b: f64, l2: f64) -> (DVector<f64>, f64) {
    let n = y.len() as f64;
    let mut z = x * w;
    for (zi, &yi) in z.iter_mut().zip(y) {
        *zi = sigmoid(*zi + b) - if yi { 1.0 } else { 0.0 };
    }
    let gw = x.tr_mul(&z) / n + w * l2;
    let gb = z.sum() / n;
    (gw, gb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LinearModel,
    /// Objective after every accepted step, starting with the initial value.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn validate_binary(x: &DMatrix<f64>, y: &[bool]) -> Result<(), LearnError> {
    if x.nrows() != y.len() {
        return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    if y.len() < 2 {
        return Err(LearnError::TooFewSamples(format!("{} rows", y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite);
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(LearnError::SingleClass);
    }
    Ok(())
}

pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], p: &LogisticParams) -> Result<LogisticFit, LearnError> {
    validate_binary(x, y)?;
    if !(p.l2 >= 0.0 && p.l2.is_finite()) {
        return Err(LearnError::InvalidParam(format!("l2 = {}", p.l2)));
    }
    let mut w = DVector::zeros(x.ncols());
    let mut b = 0.0;
    let mut f = logistic_objective(x, y, &w, b, p.l2);
    let mut losses = vec![f];
    let mut step: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < p.max_iter {
        let (gw, gb) = logistic_gradient(x, y, &w, b, p.l2);
        let gnorm_inf = gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()));
        if gnorm_inf < p.tol {
            converged = true;
            break;
        }
        let gsq = gw.norm_squared() + gb * gb;
        step = (step * 2.0).min(1e6);
        loop {
            let w_new = &w - &gw * step;
            let b_new = b - gb * step;
            let f_new = logistic_objective(x, y, &w_new, b_new, p.l2);
            if f_new <= f - ARMIJO_C * step * gsq {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                break;
            }
        }
        iterations += 1;
        if step < MIN_STEP {
            break;
        }
        losses.push(f);
    }
    Ok(LogisticFit {
        model: LinearModel { weights: w.iter().copied().collect(), bias: b },
        losses,
        iterations,
        converged,
    })
}

/// Binary logistic model; labels are `["0", "1"]`.
pub fn train_logistic(
    x: &DMatrix<f64>,
    y: &[bool],
    l2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TrainedModel, LearnError> {
    let fit = fit_logistic(x, y, &LogisticParams { l2, max_iter, tol })?;
    Ok(TrainedModel::new(
        ModelKind::Logistic,
        vec!["0".into(), "1".into()],
        ModelParams::Classifiers(vec![BinaryClassifier::Linear(fit.model)]),
    ))
}
