//! Open-set evaluation: closed-set accuracy, AUROC, FPR at a target TPR and
//! the threshold-free OSCR area.
//!
//! Scores follow the crate-wide "higher = more known" convention. All metrics
//! depend on scores only through their order, so any strictly increasing
//! transform of the scores leaves them unchanged.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_scores(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(what));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("NaN in {what}")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("accuracy over no samples"));
    }
    if preds.len() != labels.len() {
        return Err(Error::dim(
            "accuracy",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Probability that a random known sample outranks a random unknown one,
/// ties counted as one half.
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    check_scores(known, "known scores")?;
    check_scores(unknown, "unknown scores")?;
    let mut sorted = unknown.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, kept integral so the tie halves stay exact.
    let mut doubled: u128 = 0;
    for &s in known {
        let below = sorted.partition_point(|&u| u < s);
        let not_above = sorted.partition_point(|&u| u <= s);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(doubled as f64 / (2 * known.len() as u128 * unknown.len() as u128) as f64)
}

/// Number of known samples that must be accepted to reach `tpr_target`.
fn required_count(n: usize, tpr_target: f64) -> usize {
    // The epsilon absorbs products like 0.95 * 20 landing a hair above 19.
    ((tpr_target * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Fraction of unknown samples accepted (`score >= tau`) at the largest
/// threshold that accepts at least `ceil(tpr_target * |known|)` known samples.
pub fn fpr_at_tpr(known: &[f64], unknown: &[f64], tpr_target: f64) -> Result<f64> {
    check_scores(known, "known scores")?;
    check_scores(unknown, "unknown scores")?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "TPR target {tpr_target} outside (0, 1]"
        )));
    }
    let mut sorted = known.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = required_count(known.len(), tpr_target).max(1);
    let tau = sorted[k - 1];
    let accepted = unknown.iter().filter(|&&u| u >= tau).count();
    Ok(accepted as f64 / unknown.len() as f64)
}

/// A known test sample for OSCR: its score and whether it was classified correctly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnownSample {
    pub score: f64,
    pub correct: bool,
}

/// `(FPR, CCR)` points as the threshold sweeps every distinct score from
/// `+inf` downward, counting samples strictly above the threshold.
pub fn oscr_curve(known: &[KnownSample], unknown: &[f64]) -> Result<Vec<(f64, f64)>> {
    if known.is_empty() {
        return Err(Error::Empty("known samples"));
    }
    if known.iter().any(|k| k.score.is_nan()) {
        return Err(Error::InvalidArgument("NaN in known scores".into()));
    }
    check_scores(unknown, "unknown scores")?;

    // (score, correct_known, unknown) contributions, sorted by descending score.
    let mut events: Vec<(f64, u8, u8)> = known
        .iter()
        .map(|k| (k.score, k.correct as u8, 0))
        .chain(unknown.iter().map(|&u| (u, 0, 1)))
        .collect();
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut correct, mut false_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        // Threshold at this distinct score: everything counted so far is strictly above it.
        points.push((false_pos as f64 / nu, correct as f64 / nk));
        let s = events[i].0;
        while i < events.len() && events[i].0.total_cmp(&s) == Ordering::Equal {
            correct += events[i].1 as usize;
            false_pos += events[i].2 as usize;
            i += 1;
        }
    }
    Ok(points)
}

/// Area under the CCR-vs-FPR curve, extended horizontally to FPR = 1.
pub fn oscr(known: &[KnownSample], unknown: &[f64]) -> Result<f64> {
    let points = oscr_curve(known, unknown)?;
    Ok(curve_area(&points))
}

/// Trapezoidal area of a curve with nondecreasing x, extended horizontally
/// from its last point to x = 1.
pub fn curve_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    if let Some(&(x, y)) = points.last() {
        area += (1.0 - x) * y;
    }
    area
}

/// ROC points `(FPR, TPR)` for thresholds at every distinct score, accepting
/// `score >= tau`; starts at (0, 0) and ends at (1, 1).
pub fn roc_curve(known: &[f64], unknown: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(known, "known scores")?;
    check_scores(unknown, "unknown scores")?;
    let mut events: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, true))
        .chain(unknown.iter().map(|&s| (s, false)))
        .collect();
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        while i < events.len() && events[i].0 == s {
            if events[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nu, tp as f64 / nk));
    }
    Ok(points)
}

/// The four metrics for one (split, score function) pair. Open-set metrics
/// are absent when the test set has no unknown samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub oscr: Option<f64>,
}

/// Mean and population standard deviation over the present values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
