//! Next-action metrics, the half-dialogue covariate-shift analysis, and the
//! sweep protocols (low-resource, hyperparameter grid, convergence).

pub mod metrics;
pub mod protocols;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DemonstrationDataset, State};
use crate::diffmath::ParamStore;
use crate::nets::{NetError, Nets};

pub use protocols::{run_protocol, Protocol, ProtocolError, ProtocolResult, SweepConfig};
pub use metrics::{
    auc, average_precision, compute_metrics, exact_match, exact_match_accuracy, flatten_pairs, neg_log_prob,
    youden_threshold, MetricsReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("both label classes are required")]
    DegenerateLabels,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Exact-match accuracy on the first and second half of every dialogue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfDialogueReport {
    pub first_half: f64,
    pub second_half: f64,
    /// `first_half - second_half`.
    pub delta: f64,
}

/// Number of turns in the first half: `ceil(len / 2)`.
pub fn first_half_len(len: usize) -> usize {
    len.div_ceil(2)
}

/// Half-dialogue accuracies for predictions aligned with `dataset.tuples`.
pub fn half_dialogue_accuracy(
    dataset: &DemonstrationDataset,
    predictions: &[Vec<f64>],
    threshold: f64,
) -> Result<HalfDialogueReport, EvalError> {
    if predictions.len() != dataset.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} tuples",
            predictions.len(),
            dataset.len()
        )));
    }
    let (mut hits, mut counts) = ([0usize; 2], [0usize; 2]);
    let mut offset = 0;
    for dialogue in dataset.dialogues() {
        let split = first_half_len(dialogue.len());
        for (t, tuple) in dialogue.iter().enumerate() {
            let half = usize::from(t >= split);
            counts[half] += 1;
            if exact_match(&predictions[offset + t], &tuple.action, threshold) {
                hits[half] += 1;
            }
        }
        offset += dialogue.len();
    }
    if counts[1] == 0 {
        return Err(EvalError::Shape("dialogues need at least two turns".into()));
    }
    let first_half = hits[0] as f64 / counts[0] as f64;
    let second_half = hits[1] as f64 / counts[1] as f64;
    Ok(HalfDialogueReport {
        first_half,
        second_half,
        delta: first_half - second_half,
    })
}

/// Policy predictions for every tuple of a dataset.
pub fn predict_dataset(nets: &Nets, store: &ParamStore, dataset: &DemonstrationDataset) -> Result<Vec<Vec<f64>>, EvalError> {
    let states: Vec<&State> = dataset.tuples.iter().map(|t| &t.state).collect();
    Ok(nets.predict(store, &states)?)
}

/// Test-set report plus half-dialogue analysis for a trained model, with the
/// cut-off fit on `validation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub halves: HalfDialogueReport,
}

pub fn evaluate_model(
    nets: &Nets,
    store: &ParamStore,
    validation: &DemonstrationDataset,
    test: &DemonstrationDataset,
) -> Result<Evaluation, EvalError> {
    let val_preds = predict_dataset(nets, store, validation)?;
    let val_labels: Vec<_> = validation.tuples.iter().map(|t| t.action.clone()).collect();
    let preds = predict_dataset(nets, store, test)?;
    let labels: Vec<_> = test.tuples.iter().map(|t| t.action.clone()).collect();
    let metrics = compute_metrics(&preds, &labels, (&val_preds, &val_labels))?;
    let halves = half_dialogue_accuracy(test, &preds, metrics.threshold)?;
    Ok(Evaluation { metrics, halves })
}
