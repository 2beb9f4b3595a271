//! Minimal differentiable math: a reverse-mode tape over dense `f64` matrices,
//! Adam, a warmup/linear-decay schedule, and the binary-concrete relaxation.

mod adam;
pub mod gradcheck;
mod graph;
mod gumbel;
mod params;
mod schedule;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Direction};
pub use graph::{log_sum_exp, Backward, Graph, Group, Var};
pub use gumbel::{gumbel_binary_sample, logistic_noise, PROB_CLAMP};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use schedule::LrSchedule;
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use graph::sigmoid;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NumericFault { op: &'static str },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
