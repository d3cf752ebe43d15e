//! Two-sample t-tests, OLS regression on a design matrix and intersubject
//! correlation.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} finite samples per group, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("both groups are constant and equal")]
    ZeroVariance,
    #[error("infinite sample value")]
    NonFinite,
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("design has {design} rows but outcomes have {outcomes}")]
    RowMismatch { design: usize, outcomes: usize },
    #[error("need more rows ({rows}) than design columns ({cols})")]
    Underdetermined { rows: usize, cols: usize },
    #[error("need at least two subjects")]
    TooFewSubjects,
    #[error("subject {0} has a different shape from subject 0")]
    ShapeMismatch(usize),
}

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value `P(|T| >= |t|)` for Student's t with `df` degrees of
/// freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// t-test

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// NaN samples removed before testing, both groups together.
    pub dropped: usize,
}

fn finite_samples(v: &[f64]) -> Result<Vec<f64>, StatsError> {
    if v.iter().any(|x| x.is_infinite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(v.iter().copied().filter(|x| !x.is_nan()).collect())
}

fn mean_ss(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum())
}

/// Pooled-variance Student t-test of `mean(a) - mean(b)`.
pub fn ttest_ind(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    ttest_ind_with(a, b, false)
}

/// As [`ttest_ind`]; `welch` switches to unequal variances with
/// Welch-Satterthwaite degrees of freedom. Groups that are constant but
/// differ give `t = ±inf`, `p = 0`.
pub fn ttest_ind_with(a: &[f64], b: &[f64], welch: bool) -> Result<TTestResult, StatsError> {
    let fa = finite_samples(a)?;
    let fb = finite_samples(b)?;
    let dropped = a.len() - fa.len() + b.len() - fb.len();
    let got = fa.len().min(fb.len());
    if got < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got });
    }
    let (na, nb) = (fa.len() as f64, fb.len() as f64);
    let (ma, ssa) = mean_ss(&fa);
    let (mb, ssb) = mean_ss(&fb);
    let diff = ma - mb;
    let (se2, df) = if welch {
        let (va, vb) = (ssa / (na - 1.0) / na, ssb / (nb - 1.0) / nb);
        let se2 = va + vb;
        let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
        (se2, if se2 == 0.0 { na + nb - 2.0 } else { df })
    } else {
        let df = na + nb - 2.0;
        ((ssa + ssb) / df * (1.0 / na + 1.0 / nb), df)
    };
    let t = if se2 == 0.0 {
        if diff == 0.0 {
            return Err(StatsError::ZeroVariance);
        }
        diff.signum() * f64::INFINITY
    } else {
        diff / se2.sqrt()
    };
    Ok(TTestResult { t, df, p: t_two_sided_p(t, df), n_a: fa.len(), n_b: fb.len(), dropped })
}

// ---------------------------------------------------------------------------
// regression

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    /// `k x m`
    pub beta: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// `n x m`
    pub residuals: DMatrix<f64>,
    pub df: usize,
    /// Set when some outcome column is fitted exactly; its t values are
    /// `±inf` (0 where beta is 0) and p values 0 (1 where beta is 0).
    pub degenerate: bool,
}

/// Relative pivot size below which a design column counts as dependent.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares of every column of `y` on the design `x`.
pub fn regress(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<RegressionResult, StatsError> {
    let (n, k) = x.shape();
    if y.nrows() != n {
        return Err(StatsError::RowMismatch { design: n, outcomes: y.nrows() });
    }
    if n <= k {
        return Err(StatsError::Underdetermined { rows: n, cols: k });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if k == 0 || (0..k).any(|i| r[(i, i)].abs() <= RANK_TOL * max_diag) {
        return Err(StatsError::RankDeficientDesign);
    }
    let qty = qr.q().tr_mul(y);
    let beta = r.solve_upper_triangular(&qty).ok_or(StatsError::RankDeficientDesign)?;
    let residuals = y - x * &beta;
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(k, k)).ok_or(StatsError::RankDeficientDesign)?;
    // diag((X'X)^-1) = row norms of R^-1
    let xtx_diag: Vec<f64> = (0..k).map(|i| r_inv.row(i).norm_squared()).collect();
    let df = n - k;
    let m = y.ncols();
    let mut se = DMatrix::zeros(k, m);
    let mut t = DMatrix::zeros(k, m);
    let mut p = DMatrix::zeros(k, m);
    let mut degenerate = false;
    for j in 0..m {
        let sigma2 = residuals.column(j).norm_squared() / df as f64;
        for i in 0..k {
            let s = (sigma2 * xtx_diag[i]).sqrt();
            se[(i, j)] = s;
            let b = beta[(i, j)];
            if s == 0.0 {
                degenerate = true;
                t[(i, j)] = if b == 0.0 { 0.0 } else { b.signum() * f64::INFINITY };
                p[(i, j)] = if b == 0.0 { 1.0 } else { 0.0 };
            } else {
                t[(i, j)] = b / s;
                p[(i, j)] = t_two_sided_p(b / s, df as f64);
            }
        }
    }
    Ok(RegressionResult { beta, se, t, p, residuals, df, degenerate })
}

// ---------------------------------------------------------------------------
// intersubject correlation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IscAxis {
    /// Correlate subjects' feature-averaged time courses.
    Time,
    /// Correlate subjects' time-averaged feature profiles.
    Features,
}

impl std::str::FromStr for IscAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" => Ok(IscAxis::Time),
            "features" => Ok(IscAxis::Features),
            other => Err(format!("unknown axis '{other}', expected time or features")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IscResult {
    /// Symmetric `s x s`; NaN where a subject's series is constant.
    pub matrix: DMatrix<f64>,
    /// Subjects whose series was constant (or entirely NaN).
    pub constant: Vec<usize>,
}

fn nan_mean<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    let (s, c) = it.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Pearson correlation; `None` if either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || !(saa * sbb).is_finite() {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Subject-by-subject correlation of per-axis means. Each table is
/// `time x features`; NaN cells are skipped when averaging.
pub fn isc(subjects: &[DMatrix<f64>], axis: IscAxis) -> Result<IscResult, StatsError> {
    if subjects.len() < 2 {
        return Err(StatsError::TooFewSubjects);
    }
    let shape = subjects[0].shape();
    if let Some(i) = subjects.iter().position(|s| s.shape() != shape) {
        return Err(StatsError::ShapeMismatch(i));
    }
    let series: Vec<Vec<f64>> = subjects
        .iter()
        .map(|s| match axis {
            IscAxis::Time => s.row_iter().map(|r| nan_mean(r.iter())).collect(),
            IscAxis::Features => s.column_iter().map(|c| nan_mean(c.iter())).collect(),
        })
        .collect();
    let constant: Vec<usize> = series
        .iter()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|x| x.is_nan()) || pearson(v, v).is_none())
        .map(|(i, _)| i)
        .collect();
    let s = subjects.len();
    let mut matrix = DMatrix::from_element(s, s, f64::NAN);
    for i in 0..s {
        if constant.contains(&i) {
            continue;
        }
        matrix[(i, i)] = 1.0;
        for j in i + 1..s {
            if constant.contains(&j) {
                continue;
            }
            let r = pearson(&series[i], &series[j]).unwrap_or(f64::NAN);
            matrix[(i, j)] = r;
            matrix[(j, i)] = r;
        }
    }
    Ok(IscResult { matrix, constant })
}
