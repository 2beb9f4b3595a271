use serde::{Deserialize, Serialize};

use super::{DiffError, Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Whether an update follows the gradient (maximization) or opposes it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascent,
    Descent,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Ascent => Direction::Descent,
            Direction::Descent => Direction::Ascent,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    moments: Vec<Option<Moments>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn first_moment(&self, index: usize) -> Option<&[f64]> {
        self.moments.get(index)?.as_ref().map(|m| m.first.as_slice())
    }

    pub fn second_moment(&self, index: usize) -> Option<&[f64]> {
        self.moments.get(index)?.as_ref().map(|m| m.second.as_slice())
    }
}

/// One bias-corrected Adam update of every parameter in `grads`.
///
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves both the parameters and the optimizer state untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    rate: f64,
    direction: Direction,
) -> Result<(), DiffError> {
    for (id, g) in grads {
        if g.shape() != params.get(*id).shape() {
            return Err(DiffError::Shape {
                op: "adam_step",
                detail: format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    params.name(*id),
                    params.get(*id).shape()
                ),
            });
        }
        if !g.is_finite() {
            return Err(DiffError::NumericFault { op: "adam_step" });
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as f64;
    let bias1 = 1.0 - beta1.powf(t);
    let bias2 = 1.0 - beta2.powf(t);
    let signed_rate = direction.sign() * rate;

    for (id, g) in grads {
        let idx = id.index();
        if state.moments.len() <= idx {
            state.moments.resize(idx + 1, None);
        }
        let m = state.moments[idx].get_or_insert_with(|| Moments {
            first: vec![0.0; g.len()],
            second: vec![0.0; g.len()],
        });
        let p = params.get_mut(*id).data_mut();
        for (((pv, &gv), mv), vv) in p
            .iter_mut()
            .zip(g.data())
            .zip(m.first.iter_mut())
            .zip(m.second.iter_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv += signed_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
