use crate::error::{Error, Result};
use crate::graph::Dag;

/// `2 TP / (2 TP + FP + FN)`; 1 when both sides are empty.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        1.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

fn f1_masks(pred: impl Iterator<Item = bool>, truth: impl Iterator<Item = bool>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in pred.zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// F1 over directed edges.
pub fn edge_f1(pred: &Dag, truth: &Dag) -> Result<f64> {
    let d = truth.d();
    if pred.d() != d {
        return Err(Error::ShapeMismatch { expected: vec![d], got: vec![pred.d()] });
    }
    let pairs = || (0..d).flat_map(move |i| (0..d).map(move |j| (i, j))).filter(|(i, j)| i != j);
    Ok(f1_masks(pairs().map(|(i, j)| pred.has_edge(i, j)), pairs().map(|(i, j)| truth.has_edge(i, j))))
}

/// F1 over intervention-target indicators.
pub fn target_f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: vec![truth.len()], got: vec![pred.len()] });
    }
    Ok(f1_masks(pred.iter().copied(), truth.iter().copied()))
}
