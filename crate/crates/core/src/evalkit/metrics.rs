use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::ActionVector;
use crate::diffmath::PROB_CLAMP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub aps: f64,
    pub neg_log_prob: f64,
    pub threshold: f64,
    pub n_turns: usize,
}

fn by_score(a: &(f64, bool), b: &(f64, bool)) -> Ordering {
    a.0.total_cmp(&b.0)
}

fn class_counts(scores: &[(f64, bool)]) -> (u64, u64) {
    let pos = scores.iter().filter(|s| s.1).count() as u64;
    (pos, scores.len() as u64 - pos)
}

fn check_scores(scores: &[(f64, bool)]) -> Result<(u64, u64), EvalError> {
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(EvalError::Shape("scores must be finite".into()));
    }
    let (pos, neg) = class_counts(scores);
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Cut-off maximizing `TPR - FPR` over midpoints between adjacent distinct
/// scores (a score is positive when `>=` the cut-off). Ties go to the lower
/// threshold. With a single distinct score that score is returned.
pub fn youden_threshold(scores: &[(f64, bool)]) -> Result<f64, EvalError> {
    let (pos, neg) = check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(by_score);

    // Sweep upward; `tp`/`fp` count scores at or above the candidate.
    let (mut tp, mut fp) = (pos, neg);
    let mut best: Option<(i128, f64)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let threshold = 0.5 * (score + sorted[i].0);
        // J scaled by pos * neg keeps comparisons exact.
        let j = tp as i128 * neg as i128 - fp as i128 * pos as i128;
        if best.is_none_or(|(b, _)| j > b) {
            best = Some((j, threshold));
        }
    }
    Ok(best.map_or(sorted[0].0, |(_, t)| t))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64, EvalError> {
    let (pos, neg) = check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(by_score);
    // doubled counts keep the half-credit for ties integral
    let mut doubled: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        let (mut p_eq, mut n_eq) = (0u64, 0u64);
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                p_eq += 1;
            } else {
                n_eq += 1;
            }
            i += 1;
        }
        doubled += p_eq as u128 * (2 * neg_below as u128 + n_eq as u128);
        neg_below += n_eq;
    }
    Ok(doubled as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Step-wise average precision: `Σ (R_n - R_{n-1}) P_n` over distinct
/// thresholds taken from high to low.
pub fn average_precision(scores: &[(f64, bool)]) -> Result<f64, EvalError> {
    let (pos, _) = check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| by_score(b, a));
    let (mut tp, mut fp, mut prev_tp) = (0u64, 0u64, 0u64);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        total += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    Ok(total)
}

fn check_shapes(predictions: &[Vec<f64>], labels: &[ActionVector]) -> Result<(), EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    for (p, y) in predictions.iter().zip(labels) {
        if p.len() != y.k() {
            return Err(EvalError::Shape(format!(
                "prediction of width {} for a label of width {}",
                p.len(),
                y.k()
            )));
        }
    }
    Ok(())
}

/// `-mean_turns Σ_j [y ln p + (1 - y) ln(1 - p)]` with clamped probabilities.
pub fn neg_log_prob(predictions: &[Vec<f64>], labels: &[ActionVector]) -> Result<f64, EvalError> {
    check_shapes(predictions, labels)?;
    if predictions.is_empty() {
        return Err(EvalError::Shape("no turns to score".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            p.iter()
                .zip(y.bits())
                .map(|(&pj, &yj)| {
                    let pj = pj.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    if yj == 1 {
                        pj.ln()
                    } else {
                        (1.0 - pj).ln()
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(-total / predictions.len() as f64)
}

/// Whether the thresholded prediction reproduces the full label vector.
pub fn exact_match(prediction: &[f64], label: &ActionVector, threshold: f64) -> bool {
    prediction.iter().zip(label.bits()).all(|(&p, &y)| (p >= threshold) == (y == 1))
}

pub fn exact_match_accuracy(predictions: &[Vec<f64>], labels: &[ActionVector], threshold: f64) -> Result<f64, EvalError> {
    check_shapes(predictions, labels)?;
    if predictions.is_empty() {
        return Err(EvalError::Shape("no turns to score".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| exact_match(p, y, threshold)).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Flattens per-turn predictions into micro-averaged `(score, label)` pairs.
pub fn flatten_pairs(predictions: &[Vec<f64>], labels: &[ActionVector]) -> Result<Vec<(f64, bool)>, EvalError> {
    check_shapes(predictions, labels)?;
    Ok(predictions
        .iter()
        .zip(labels)
        .flat_map(|(p, y)| p.iter().zip(y.bits()).map(|(&pj, &yj)| (pj, yj == 1)))
        .collect())
}

/// Full report; the accuracy cut-off is fit on `threshold_source`.
pub fn compute_metrics(
    predictions: &[Vec<f64>],
    labels: &[ActionVector],
    threshold_source: (&[Vec<f64>], &[ActionVector]),
) -> Result<MetricsReport, EvalError> {
    let source = flatten_pairs(threshold_source.0, threshold_source.1)?;
    if source.is_empty() {
        return Err(EvalError::Shape("empty threshold source".into()));
    }
    let threshold = youden_threshold(&source)?;
    let pairs = flatten_pairs(predictions, labels)?;
    Ok(MetricsReport {
        accuracy: exact_match_accuracy(predictions, labels, threshold)?,
        auc: auc(&pairs)?,
        aps: average_precision(&pairs)?,
        neg_log_prob: neg_log_prob(predictions, labels)?,
        threshold,
        n_turns: predictions.len(),
    })
}
