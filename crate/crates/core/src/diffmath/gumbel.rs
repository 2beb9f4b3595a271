//! Binary-concrete relaxation: the two-class Gumbel-softmax on `(p, 1 - p)`,
//! applied independently per sub-action.
//!
//! With logistic noise `L = ln u - ln(1 - u)` the relaxed sample is
//! `sigmoid((logit p + L) / temperature)`.

use rand::Rng;

use super::{DiffError, Graph, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-6;

/// Logistic noise, one draw per entry. Equivalent to the difference of two
/// independent Gumbel(0, 1) variables.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

/// Differentiable relaxed Bernoulli sample for every entry of `probs`.
/// `noise` must hold one logistic draw per entry.
pub fn gumbel_binary_sample(
    g: &mut Graph,
    probs: Var,
    noise: &[f64],
    temperature: f64,
) -> Result<Var, DiffError> {
    if !(temperature > 0.0) {
        return Err(DiffError::Domain(format!(
            "gumbel temperature must be positive, got {temperature}"
        )));
    }
    let (rows, cols) = g.value(probs).shape();
    if noise.len() != rows * cols {
        return Err(DiffError::Shape {
            op: "gumbel_binary_sample",
            detail: format!("{} noise draws for {rows}x{cols} probabilities", noise.len()),
        });
    }
    let p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = g.log(p)?;
    let q = g.one_minus(p)?;
    let log_q = g.log(q)?;
    let logit = g.sub(log_p, log_q)?;
    let noise = g.constant(Tensor::from_vec(rows, cols, noise.to_vec()))?;
    let perturbed = g.add(logit, noise)?;
    let scaled = g.scale(perturbed, 1.0 / temperature)?;
    g.sigmoid(scaled)
}
