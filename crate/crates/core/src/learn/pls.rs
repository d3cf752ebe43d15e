//! PLS2 regression by NIPALS with mean-centering and deflation of both
//! blocks.

use nalgebra::{DMatrix, DVector};

use super::model::{ModelKind, ModelParams, PlsParams, TrainedModel};
use super::LearnError;

const INNER_TOL: f64 = 1e-12;
const INNER_MAX_ITER: usize = 500;
/// Relative squared norm below which a score vector counts as zero.
const ZERO_SCORE: f64 = 1e-20;

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let means: Vec<f64> = m.column_iter().map(|c| c.sum() / n).collect();
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (out, means)
}

fn max_ss_column(m: &DMatrix<f64>) -> (usize, f64) {
    m.column_iter()
        .map(|c| c.norm_squared())
        .enumerate()
        .fold((0, -1.0), |best, (j, ss)| if ss > best.1 { (j, ss) } else { best })
}

/// Dominant right singular vector of `x`, sign-fixed so its largest entry
/// is positive.
fn dominant_direction(x: &DMatrix<f64>) -> DVector<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let (best, _) =
        svd.singular_values.iter().enumerate().fold((0, -1.0), |b, (i, &s)| if s > b.1 { (i, s) } else { b });
    let mut w: DVector<f64> = vt.row(best).transpose();
    let (imax, _) = w.iter().enumerate().fold((0, -1.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
    if w[imax] < 0.0 {
        w.neg_mut();
    }
    w
}

/// Fits `k` components. Labels of the returned model name the outputs
/// `y_0 .. y_{m-1}`.
pub fn fit_pls(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<TrainedModel, LearnError> {
    let (n, d) = x.shape();
    let m = y.ncols();
    if y.nrows() != n {
        return Err(LearnError::DimensionMismatch { expected: n, got: y.nrows() });
    }
    if m == 0 || d == 0 {
        return Err(LearnError::InvalidParam("pls needs at least one input and one output column".into()));
    }
    if k == 0 || n < 2 || k > (n - 1).min(d) {
        return Err(LearnError::InvalidParam(format!("k = {k} outside 1..=min(n-1, d) for n = {n}, d = {d}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite);
    }

    let (mut xr, x_mean) = centered(x);
    let (mut yr, y_mean) = centered(y);
    let x_ss = xr.norm_squared();
    let y_ss = yr.norm_squared();

    let mut w_mat = DMatrix::zeros(d, k);
    let mut p_mat = DMatrix::zeros(d, k);
    let mut c_mat = DMatrix::zeros(m, k);

    for a in 0..k {
        let (j, ss) = max_ss_column(&yr);
        let mut w: DVector<f64>;
        let mut t: DVector<f64>;
        let mut c: DVector<f64>;
        let y_exhausted = ss <= ZERO_SCORE * y_ss.max(f64::MIN_POSITIVE);
        let start = yr.column(j).into_owned();
        let xtu = xr.tr_mul(&start);
        if y_exhausted || xtu.norm_squared() <= ZERO_SCORE * x_ss.max(f64::MIN_POSITIVE) * ss.max(1.0) {
            w = dominant_direction(&xr);
            t = &xr * &w;
            c = DVector::zeros(m);
        } else {
            let mut u = start;
            t = DVector::zeros(n);
            w = DVector::zeros(d);
            c = DVector::zeros(m);
            for _ in 0..INNER_MAX_ITER {
                w = xr.tr_mul(&u);
                let wn = w.norm();
                if wn == 0.0 {
                    break;
                }
                w /= wn;
                let t_new = &xr * &w;
                let tt = t_new.norm_squared();
                if tt == 0.0 {
                    t = t_new;
                    break;
                }
                c = yr.tr_mul(&t_new) / tt;
                let cc = c.norm_squared();
                let moved = (&t_new - &t).norm() / tt.sqrt();
                t = t_new;
                if cc == 0.0 || moved < INNER_TOL {
                    break;
                }
                u = &yr * &c / cc;
            }
        }
        let tt = t.norm_squared();
        if tt <= ZERO_SCORE * x_ss || tt == 0.0 {
            return Err(LearnError::RankDeficient(format!("component {} has a zero score vector", a + 1)));
        }
        let p = xr.tr_mul(&t) / tt;
        xr -= &t * p.transpose();
        yr -= &t * c.transpose();
        w_mat.set_column(a, &w);
        p_mat.set_column(a, &p);
        c_mat.set_column(a, &c);
    }

    let ptw = p_mat.tr_mul(&w_mat);
    let inv =
        ptw.try_inverse().ok_or_else(|| LearnError::RankDeficient("loading-weight product is singular".into()))?;
    let coefficients = &w_mat * inv * c_mat.transpose();
    let xm = DVector::from_column_slice(&x_mean);
    let shift = coefficients.tr_mul(&xm);
    let intercept: Vec<f64> = y_mean.iter().zip(shift.iter()).map(|(a, b)| a - b).collect();

    let params = PlsParams {
        k,
        x_mean,
        y_mean,
        x_weights: w_mat,
        x_loadings: p_mat,
        y_loadings: c_mat,
        coefficients,
        intercept,
    };
    let labels = (0..m).map(|j| format!("y_{j}")).collect();
    Ok(TrainedModel::new(ModelKind::Pls, labels, ModelParams::Pls(params)))
}
