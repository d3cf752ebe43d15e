//! Stratified k-fold grid search and leave-one-group-out evaluation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;

use super::model::{predict, train, HyperParams, ModelKind};
use super::LearnError;
use crate::metrics::{f1, per_label_f1, ConfusionCounts};

/// Grid values are `None` for knobs that accept "unlimited" (`max_depth`).
pub type Grid = BTreeMap<String, Vec<Option<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    /// Cells are enumerated row-major over the keys in sorted order: the
    /// first key varies slowest.
    pub grid: Grid,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(folds: usize, grid: Grid, seed: u64) -> Result<Self, LearnError> {
        if folds < 2 {
            return Err(LearnError::InvalidParam(format!("folds must be at least 2, got {folds}")));
        }
        if let Some((k, _)) = grid.iter().find(|(_, v)| v.is_empty()) {
            return Err(LearnError::InvalidParam(format!("grid entry '{k}' has no candidates")));
        }
        Ok(Self { folds, grid, seed })
    }

    /// Three folds over the default grid for `kind`.
    pub fn default_for(kind: ModelKind, seed: u64) -> Self {
        let mut grid = Grid::new();
        match kind {
            ModelKind::Logistic | ModelKind::Svm => {
                grid.insert("l2".into(), vec![Some(1e-4), Some(1e-2), Some(1.0)]);
            }
            ModelKind::Forest => {
                grid.insert("n_trees".into(), vec![Some(100.0)]);
                grid.insert("max_depth".into(), vec![Some(8.0), None]);
            }
            ModelKind::Pls => {}
        }
        Self { folds: 3, grid, seed }
    }

    pub fn cells(&self) -> Vec<BTreeMap<String, Option<f64>>> {
        let mut cells = vec![BTreeMap::new()];
        for (key, values) in &self.grid {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for cell in &cells {
                for v in values {
                    let mut c = cell.clone();
                    c.insert(key.clone(), *v);
                    next.push(c);
                }
            }
            cells = next;
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub params: BTreeMap<String, Option<f64>>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    /// Index into `cells` of the winner: highest mean F1, earliest on ties.
    pub best: usize,
    pub best_params: HyperParams,
    pub cells: Vec<GridCell>,
}

/// Fold index per row. Rows of each class (ascending class order) are
/// shuffled with one generator seeded from `seed`, the classes are
/// concatenated, and the sequence is dealt round-robin across folds.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>, LearnError> {
    if folds < 2 {
        return Err(LearnError::InvalidParam(format!("folds must be at least 2, got {folds}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if let Some((c, rows)) = by_class.iter().find(|(_, r)| r.len() < folds) {
        return Err(LearnError::TooFewSamples(format!("class {c} has {} rows for {folds} folds", rows.len())));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut pos = 0;
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            assignment[i] = pos % folds;
            pos += 1;
        }
    }
    Ok(assignment)
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Positive-class F1 for two labels, macro F1 otherwise.
fn score(pred: &[usize], truth: &[usize], n_labels: usize) -> f64 {
    if n_labels == 2 {
        f1(&ConfusionCounts::tally(pred, truth, &1))
    } else {
        let labels: Vec<usize> = (0..n_labels).collect();
        per_label_f1(pred, truth, &labels).map(|r| r.average).unwrap_or(0.0)
    }
}

/// Scores every grid cell by mean validation F1 over stratified folds.
/// `base` supplies every knob the grid does not mention.
pub fn grid_search_cv(
    x: &DMatrix<f64>,
    y: &[usize],
    labels: &[String],
    kind: ModelKind,
    plan: &CvPlan,
    base: &HyperParams,
) -> Result<GridSearchResult, LearnError> {
    if x.nrows() != y.len() {
        return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    let assignment = stratified_folds(y, plan.folds, plan.seed)?;
    let cells = plan.cells();
    let hps: Vec<HyperParams> = cells
        .iter()
        .map(|cell| {
            let mut hp = *base;
            for (k, v) in cell {
                hp.set(k, *v)?;
            }
            Ok(hp)
        })
        .collect::<Result<_, LearnError>>()?;

    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..plan.folds).map(move |f| (c, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let train_rows: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
            let test_rows: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
            let ytr: Vec<usize> = train_rows.iter().map(|&i| y[i]).collect();
            let yte: Vec<usize> = test_rows.iter().map(|&i| y[i]).collect();
            let model = train(kind, &select_rows(x, &train_rows), &ytr, labels, &hps[c])?;
            let pred = predict(&model, &select_rows(x, &test_rows))?;
            Ok(score(&pred, &yte, labels.len()))
        })
        .collect::<Result<_, LearnError>>()?;

    let mut out = Vec::with_capacity(cells.len());
    let mut best = 0;
    let mut best_f1 = f64::NEG_INFINITY;
    for (c, params) in cells.into_iter().enumerate() {
        let mean_f1 = scores[c * plan.folds..(c + 1) * plan.folds].iter().sum::<f64>() / plan.folds as f64;
        if mean_f1 > best_f1 {
            best = c;
            best_f1 = mean_f1;
        }
        out.push(GridCell { params, mean_f1 });
    }
    Ok(GridSearchResult { best, best_params: hps[best], cells: out })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogoResult {
    /// Held-out prediction for every row, in input order.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Trains once per distinct group on all other rows and predicts the
/// held-out rows.
pub fn leave_one_group_out<G: PartialEq + Sync>(
    x: &DMatrix<f64>,
    y: &[usize],
    groups: &[G],
    labels: &[String],
    kind: ModelKind,
    hp: &HyperParams,
) -> Result<LogoResult, LearnError> {
    if x.nrows() != y.len() || groups.len() != y.len() {
        return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.len().min(groups.len()) });
    }
    let mut distinct: Vec<&G> = Vec::new();
    for g in groups {
        if !distinct.contains(&g) {
            distinct.push(g);
        }
    }
    if distinct.len() < 2 {
        return Err(LearnError::SingleGroup);
    }
    let per_group: Vec<Vec<(usize, usize)>> = distinct
        .par_iter()
        .map(|g| {
            let train_rows: Vec<usize> = (0..y.len()).filter(|&i| groups[i] != **g).collect();
            let test_rows: Vec<usize> = (0..y.len()).filter(|&i| groups[i] == **g).collect();
            let ytr: Vec<usize> = train_rows.iter().map(|&i| y[i]).collect();
            let model = train(kind, &select_rows(x, &train_rows), &ytr, labels, hp)?;
            let pred = predict(&model, &select_rows(x, &test_rows))?;
            Ok(test_rows.into_iter().zip(pred).collect())
        })
        .collect::<Result<_, LearnError>>()?;
    let mut predictions = vec![0; y.len()];
    for (i, p) in per_group.into_iter().flatten() {
        predictions[i] = p;
    }
    let correct = predictions.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(LogoResult { accuracy: correct as f64 / y.len() as f64, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels2() -> Vec<String> {
        vec!["0".into(), "1".into()]
    }

    fn separable(n: usize) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { -1.0 - i as f64 } else { 1.0 + i as f64 });
        (x, (0..n).map(|i| i % 2).collect())
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let y: Vec<usize> = (0..12).map(|i| (i < 6) as usize).collect();
        let a = stratified_folds(&y, 3, 5).unwrap();
        assert_eq!(a, stratified_folds(&y, 3, 5).unwrap());
        for f in 0..3 {
            let pos = (0..12).filter(|&i| a[i] == f && y[i] == 1).count();
            let neg = (0..12).filter(|&i| a[i] == f && y[i] == 0).count();
            assert_eq!((pos, neg), (2, 2));
        }
        assert!(matches!(stratified_folds(&[0, 0, 0, 1, 1], 3, 0), Err(LearnError::TooFewSamples(_))));
    }

    #[test]
    fn cells_row_major() {
        let mut grid = Grid::new();
        grid.insert("a".into(), vec![Some(1.0), Some(2.0)]);
        grid.insert("b".into(), vec![Some(3.0), None]);
        let plan = CvPlan::new(2, grid, 0).unwrap();
        let cells: Vec<(Option<f64>, Option<f64>)> = plan.cells().iter().map(|c| (c["a"], c["b"])).collect();
        assert_eq!(cells, vec![(Some(1.0), Some(3.0)), (Some(1.0), None), (Some(2.0), Some(3.0)), (Some(2.0), None)]);
        assert!(CvPlan::new(1, Grid::new(), 0).is_err());
    }

    #[test]
    fn duplicate_cells_first_wins() {
        let (x, y) = separable(12);
        let mut grid = Grid::new();
        grid.insert("l2".into(), vec![Some(1e-2), Some(1e-2)]);
        let plan = CvPlan::new(3, grid, 1).unwrap();
        let r = grid_search_cv(&x, &y, &labels2(), ModelKind::Logistic, &plan, &HyperParams::default()).unwrap();
        assert_eq!(r.best, 0);
        assert_eq!(r.cells[0].mean_f1, r.cells[1].mean_f1);
    }

    #[test]
    fn logo_single_row_groups() {
        let (x, y) = separable(8);
        let groups: Vec<usize> = (0..8).collect();
        let r = leave_one_group_out(&x, &y, &groups, &labels2(), ModelKind::Logistic, &HyperParams::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(matches!(
            leave_one_group_out(&x, &y, &[0; 8], &labels2(), ModelKind::Logistic, &HyperParams::default()),
            Err(LearnError::SingleGroup)
        ));
    }
}
