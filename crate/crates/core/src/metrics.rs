//! Benchmark metrics: precision/recall/F1, detection AP, landmark error.
//!
//! Empty denominators yield 0 for precision, recall and F1.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{interocular_distance, iou, FaceBox, GeometryError, LandmarkSet};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Tally for one positive label over paired predictions and truths.
    pub fn tally<T: PartialEq>(pred: &[T], truth: &[T], positive: &T) -> Self {
        let mut c = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            match (p == positive, t == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    match c.tp + c.fp {
        0 => 0.0,
        d => c.tp as f64 / d as f64,
    }
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    match c.tp + c.fn_ {
        0 => 0.0,
        d => c.tp as f64 / d as f64,
    }
}

pub fn f1(c: &ConfusionCounts) -> f64 {
    let p = precision(c);
    let r = recall(c);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * (p * r / (p + r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelF1 {
    pub label: String,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerLabelF1 {
    pub per_label: Vec<LabelF1>,
    /// Unweighted mean over `per_label`.
    pub average: f64,
}

/// One-vs-rest F1 per label plus the macro average.
pub fn per_label_f1<T: PartialEq + ToString>(
    pred: &[T],
    truth: &[T],
    labels: &[T],
) -> Result<PerLabelF1, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let per_label: Vec<LabelF1> = labels
        .iter()
        .map(|l| {
            let counts = ConfusionCounts::tally(pred, truth, l);
            LabelF1 { label: l.to_string(), f1: f1(&counts), counts }
        })
        .collect();
    let average =
        if per_label.is_empty() { 0.0 } else { per_label.iter().map(|l| l.f1).sum::<f64>() / per_label.len() as f64 };
    Ok(PerLabelF1 { per_label, average })
}

/// A ground-truth box; ignored boxes neither reward nor penalize a match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthBox {
    pub bbox: FaceBox,
    pub ignore: bool,
}

/// Outcome of greedily matching one image's predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Greedy matching in descending score order (stable for ties). Each
/// prediction takes the unmatched truth with the highest IoU at or above
/// `threshold`, lowest truth index on equal IoU. Returned in input order.
pub fn match_detections(preds: &[FaceBox], truths: &[TruthBox], threshold: f64) -> Vec<MatchOutcome> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; truths.len()];
    let mut out = vec![MatchOutcome::FalsePositive; preds.len()];
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truths.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let o = iou(&preds[i], &t.bbox);
            if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            out[i] = if truths[j].ignore { MatchOutcome::Ignored } else { MatchOutcome::TruePositive };
        }
    }
    out
}

/// All-points interpolated AP from ranked TP/FP flags and the number of
/// (non-ignored) truths.
fn ap_from_ranked(ranked_tp: &[bool], n_truths: usize) -> f64 {
    if n_truths == 0 {
        return if ranked_tp.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precisions = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        precisions.push(tp as f64 / (k + 1) as f64);
    }
    // running max from the tail gives the interpolated precision envelope
    let mut envelope = precisions.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let sum: f64 = ranked_tp.iter().zip(&envelope).filter(|(&hit, _)| hit).map(|(_, &p)| p).sum();
    sum / n_truths as f64
}

/// Average precision over several images, with predictions ranked jointly.
/// No truths and no predictions is defined as 1.0; no truths with
/// predictions is 0.0.
pub fn pooled_average_precision(images: &[(Vec<FaceBox>, Vec<TruthBox>)], threshold: f64) -> f64 {
    let mut scored: Vec<(f64, usize, MatchOutcome)> = Vec::new();
    let mut n_truths = 0;
    let mut seq = 0;
    for (preds, truths) in images {
        n_truths += truths.iter().filter(|t| !t.ignore).count();
        for (p, m) in preds.iter().zip(match_detections(preds, truths, threshold)) {
            scored.push((p.score, seq, m));
            seq += 1;
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let ranked: Vec<bool> =
        scored.iter().filter(|s| s.2 != MatchOutcome::Ignored).map(|s| s.2 == MatchOutcome::TruePositive).collect();
    ap_from_ranked(&ranked, n_truths)
}

pub fn average_precision(preds: &[FaceBox], truths: &[FaceBox], threshold: f64) -> f64 {
    let truths = truths.iter().map(|&bbox| TruthBox { bbox, ignore: false }).collect();
    pooled_average_precision(&[(preds.to_vec(), truths)], threshold)
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Mean point-to-point error divided by the truth's interocular distance.
pub fn landmark_nrmse(pred: &LandmarkSet, truth: &LandmarkSet) -> Result<f64, MetricsError> {
    let iod = interocular_distance(truth)?;
    let n = truth.points().len() as f64;
    let total: f64 = pred.points().iter().zip(truth.points()).map(|(p, t)| (p - t).norm()).sum();
    Ok(total / n / iod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        let c = ConfusionCounts::new(3, 1, 2, 0);
        assert_eq!(precision(&c), 0.75);
        assert_eq!(recall(&c), 0.6);
        assert!((f1(&c) - 0.6667).abs() < 1e-4);
        let empty = ConfusionCounts::default();
        assert_eq!((precision(&empty), recall(&empty), f1(&empty)), (0.0, 0.0, 0.0));
        assert_eq!(precision(&ConfusionCounts::new(5, 0, 3, 0)), 1.0);
        assert_eq!(recall(&ConfusionCounts::new(5, 3, 0, 0)), 1.0);
        assert_eq!(f1(&ConfusionCounts::new(0, 3, 2, 0)), 0.0);
        assert_eq!(f1(&ConfusionCounts::new(4, 0, 0, 9)), 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let truth = ["a", "a", "b", "b"];
        let pred = ["a"; 4];
        let r = per_label_f1(&pred, &truth, &["a", "b"]).unwrap();
        assert!((r.per_label[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_label[1].f1, 0.0);
        assert!((r.average - 1.0 / 3.0).abs() < 1e-15);
        assert!(per_label_f1(&pred[..3], &truth, &["a"]).is_err());
    }

    #[test]
    fn ap_edge_cases() {
        let b = FaceBox::new(0.0, 0.0, 10.0, 10.0, 0.9).unwrap();
        assert_eq!(average_precision(&[b], &[b], 0.5), 1.0);
        assert_eq!(average_precision(&[], &[b], 0.5), 0.0);
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert_eq!(average_precision(&[b], &[], 0.5), 0.0);
    }

    #[test]
    fn ignored_truth_match_is_neutral() {
        let b = FaceBox::new(0.0, 0.0, 10.0, 10.0, 0.9).unwrap();
        let c = FaceBox::new(50.0, 0.0, 10.0, 10.0, 0.8).unwrap();
        let truths = vec![TruthBox { bbox: b, ignore: true }, TruthBox { bbox: c, ignore: false }];
        assert_eq!(pooled_average_precision(&[(vec![b, c], truths)], 0.5), 1.0);
    }
}
