//! The SD losses: the empirical occupancy-matching objective `Ĵ_OIL`, the
//! supervised BCE regularizer `Ĵ_SL`, their combination, and a standalone
//! Donsker-Varadhan KL testbed.
//!
//! `Ĵ_OIL = (γ - 1) · mean φ(s0, â0) + log-mean-exp[φ(s, a) - γ·m·φ(s', â')]`
//! where `â0`, `â'` come from the policy and `m` masks terminal transitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Representation, State, TransitionTuple};
use crate::diffmath::{
    gumbel_binary_sample, logistic_noise, DiffError, Direction, Gradients, Graph, ParamStore, Tensor, Var, PROB_CLAMP,
};
use crate::nets::{NetError, Nets, POLICY, VALUE};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch mixes state representations")]
    MixedRepresentation,
    #[error("invalid objective configuration: {0}")]
    Config(String),
    #[error("non-finite value in {term} (op {op})")]
    NumericFault { term: &'static str, op: &'static str },
    #[error(transparent)]
    Net(NetError),
    #[error(transparent)]
    Diff(DiffError),
}

impl ObjectiveError {
    fn in_term(term: &'static str) -> impl Fn(DiffError) -> Self {
        move |e| match e {
            DiffError::NumericFault { op } => Self::NumericFault { term, op },
            other => Self::Diff(other),
        }
    }

    fn net_in_term(term: &'static str) -> impl Fn(NetError) -> Self {
        move |e| match e {
            NetError::Diff(d) => Self::in_term(term)(d),
            other => Self::Net(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Feed the policy's probability vector straight into φ.
    CancelSampling,
    /// Feed a binary-concrete relaxed sample.
    GumbelSample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaddleDirection {
    /// θ minimizes, ν maximizes.
    Paper,
    /// θ maximizes, ν minimizes.
    Reversed,
}

impl SaddleDirection {
    /// Update directions for `(θ, ν)` on the OIL term.
    pub fn directions(self) -> (Direction, Direction) {
        match self {
            Self::Paper => (Direction::Descent, Direction::Ascent),
            Self::Reversed => (Direction::Ascent, Direction::Descent),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub sampling_mode: SamplingMode,
    pub temperature: f64,
    pub saddle_direction: SaddleDirection,
    pub terminal_mask: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda: 1.0,
            sampling_mode: SamplingMode::CancelSampling,
            temperature: 1.0,
            saddle_direction: SaddleDirection::Paper,
            terminal_mask: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ObjectiveError::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(ObjectiveError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.sampling_mode == SamplingMode::GumbelSample && !(self.temperature > 0.0) {
            return Err(ObjectiveError::Config(format!(
                "gumbel temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A non-empty mini-batch of transitions with one state representation.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    tuples: Vec<&'a TransitionTuple>,
}

impl<'a> Batch<'a> {
    pub fn new(tuples: Vec<&'a TransitionTuple>) -> Result<Self, ObjectiveError> {
        let first = tuples.first().ok_or(ObjectiveError::EmptyBatch)?;
        let rep: Representation = first.state.representation();
        let homogeneous = tuples.iter().all(|t| {
            t.state.representation() == rep
                && t.initial_state.representation() == rep
                && t.next_state.representation() == rep
        });
        if !homogeneous {
            return Err(ObjectiveError::MixedRepresentation);
        }
        Ok(Self { tuples })
    }

    pub fn from_slice(tuples: &'a [TransitionTuple]) -> Result<Self, ObjectiveError> {
        Self::new(tuples.iter().collect())
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[&'a TransitionTuple] {
        &self.tuples
    }

    fn states(&self, pick: impl Fn(&TransitionTuple) -> &State) -> Vec<&'a State> {
        self.tuples.iter().map(|t| pick(*t)).collect()
    }

    fn labels(&self, k: usize) -> Result<Tensor, ObjectiveError> {
        let mut data = Vec::with_capacity(self.len() * k);
        for t in &self.tuples {
            if t.action.k() != k {
                return Err(ObjectiveError::Diff(DiffError::Shape {
                    op: "labels",
                    detail: format!("action of length {} for k={k}", t.action.k()),
                }));
            }
            data.extend(t.action.to_f64());
        }
        Ok(Tensor::from_vec(self.len(), k, data))
    }
}

/// Which terms to build on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Parts {
    pub oil: bool,
    pub sl: bool,
}

/// Tape handles of the scalar objective terms.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Terms {
    pub oil: Option<Var>,
    pub sl: Option<Var>,
}

/// The OIL combination from per-example φ columns (`n x 1` each).
/// `log_mean` selects log-mean-exp; otherwise plain log-sum-exp.
pub(crate) fn oil_from_phi(
    g: &mut Graph,
    phi_initial: Var,
    phi_current: Var,
    phi_next: Var,
    mask: &[f64],
    gamma: f64,
    log_mean: bool,
) -> Result<Var, ObjectiveError> {
    let n = mask.len();
    let first = (|| {
        let m = g.mean(phi_initial)?;
        g.scale(m, gamma - 1.0)
    })()
    .map_err(ObjectiveError::in_term("initial term"))?;
    let second = (|| {
        let m = g.constant(Tensor::column(mask.to_vec()))?;
        let masked = g.mul(phi_next, m)?;
        let discounted = g.scale(masked, gamma)?;
        let diff = g.sub(phi_current, discounted)?;
        let lse = g.log_sum_exp(diff)?;
        if log_mean {
            g.offset(lse, -(n as f64).ln())
        } else {
            Ok(lse)
        }
    })()
    .map_err(ObjectiveError::in_term("log-mean-exp term"))?;
    g.add(first, second).map_err(ObjectiveError::in_term("oil"))
}

/// Per-example mean of the multi-label BCE for an `n x k` probability block.
pub(crate) fn bce(g: &mut Graph, probs: Var, labels: Tensor) -> Result<Var, DiffError> {
    let n = labels.rows();
    let p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let y = g.constant(labels)?;
    let log_p = g.log(p)?;
    let q = g.one_minus(p)?;
    let log_q = g.log(q)?;
    let not_y = g.one_minus(y)?;
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_q)?;
    let ll = g.add(pos, neg)?;
    let total = g.sum(ll)?;
    g.scale(total, -1.0 / n as f64)
}

fn relax<R: Rng + ?Sized>(
    g: &mut Graph,
    probs: Var,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    match cfg.sampling_mode {
        SamplingMode::CancelSampling => Ok(probs),
        SamplingMode::GumbelSample => {
            let (rows, cols) = g.value(probs).shape();
            let noise = logistic_noise(rng, rows * cols);
            gumbel_binary_sample(g, probs, &noise, cfg.temperature).map_err(ObjectiveError::in_term("gumbel sample"))
        }
    }
}

/// Builds the requested terms with one batched policy forward over
/// `[s; s0; s']` and one batched value forward over `[s0; s; s']`.
pub(crate) fn build_terms<R: Rng + ?Sized>(
    g: &mut Graph,
    store: &ParamStore,
    nets: &Nets,
    batch: &Batch<'_>,
    cfg: &ObjectiveConfig,
    parts: Parts,
    rng: &mut R,
    log_mean: bool,
) -> Result<Terms, ObjectiveError> {
    cfg.validate()?;
    let n = batch.len();
    let k = nets.config.k;
    let current = batch.states(|t| &t.state);
    let initial = batch.states(|t| &t.initial_state);
    let next = batch.states(|t| &t.next_state);

    let mut policy_states: Vec<&State> = Vec::with_capacity(3 * n);
    if parts.sl {
        policy_states.extend(&current);
    }
    if parts.oil {
        policy_states.extend(&initial);
        policy_states.extend(&next);
    }
    let probs = nets
        .policy
        .forward(g, store, &policy_states)
        .map_err(ObjectiveError::net_in_term("policy forward"))?;
    let mut offset = 0;
    let mut terms = Terms { oil: None, sl: None };

    if parts.sl {
        let p = g.slice_rows(probs, 0, n).map_err(ObjectiveError::Diff)?;
        offset = n;
        let sl = bce(g, p, batch.labels(k)?).map_err(ObjectiveError::in_term("sl"))?;
        terms.sl = Some(sl);
    }
    if parts.oil {
        let p_rest = g.slice_rows(probs, offset, 2 * n).map_err(ObjectiveError::Diff)?;
        let relaxed = relax(g, p_rest, cfg, rng)?;
        let a_initial = g.slice_rows(relaxed, 0, n).map_err(ObjectiveError::Diff)?;
        let a_next = g.slice_rows(relaxed, n, n).map_err(ObjectiveError::Diff)?;
        let a_current = g.constant(batch.labels(k)?).map_err(ObjectiveError::Diff)?;
        let actions = g
            .concat_rows(&[a_initial, a_current, a_next])
            .map_err(ObjectiveError::Diff)?;
        let value_states: Vec<&State> = initial.iter().chain(&current).chain(&next).copied().collect();
        let phi = nets
            .value
            .forward(g, store, &value_states, actions)
            .map_err(ObjectiveError::net_in_term("value forward"))?;
        let phi_initial = g.slice_rows(phi, 0, n).map_err(ObjectiveError::Diff)?;
        let phi_current = g.slice_rows(phi, n, n).map_err(ObjectiveError::Diff)?;
        let phi_next = g.slice_rows(phi, 2 * n, n).map_err(ObjectiveError::Diff)?;
        let mask: Vec<f64> = batch
            .tuples()
            .iter()
            .map(|t| if cfg.terminal_mask && t.done { 0.0 } else { 1.0 })
            .collect();
        terms.oil = Some(oil_from_phi(g, phi_initial, phi_current, phi_next, &mask, cfg.gamma, log_mean)?);
    }
    Ok(terms)
}

/// A scalar objective with its gradients for both parameter groups.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub theta: Gradients,
    pub nu: Gradients,
}

/// Values and gradients of the combined objective.
#[derive(Clone, Debug)]
pub struct TotalObjective {
    pub j_oil: f64,
    pub j_sl: f64,
    pub j_total: f64,
    /// Gradient of `λ·Ĵ_SL + Ĵ_OIL` with respect to θ.
    pub theta: Gradients,
    /// Gradient of `Ĵ_OIL` with respect to ν.
    pub nu: Gradients,
}

pub fn j_oil<R: Rng + ?Sized>(
    store: &ParamStore,
    nets: &Nets,
    batch: &Batch<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<Objective, ObjectiveError> {
    let mut g = Graph::new();
    let parts = Parts { oil: true, sl: false };
    let terms = build_terms(&mut g, store, nets, batch, cfg, parts, rng, true)?;
    let oil = terms.oil.expect("oil requested");
    let back = g.backward(oil).map_err(ObjectiveError::in_term("oil backward"))?;
    Ok(Objective {
        value: g.value(oil).item(),
        theta: back.param_grads(POLICY),
        nu: back.param_grads(VALUE),
    })
}

/// `Ĵ_SL`; the ν gradient is empty.
pub fn j_sl(store: &ParamStore, nets: &Nets, batch: &Batch<'_>) -> Result<Objective, ObjectiveError> {
    let mut g = Graph::new();
    let parts = Parts { oil: false, sl: true };
    let cfg = ObjectiveConfig::default();
    let terms = build_terms(&mut g, store, nets, batch, &cfg, parts, &mut ChaCha8Rng::seed_from_u64(0), true)?;
    let sl = terms.sl.expect("sl requested");
    let back = g.backward(sl).map_err(ObjectiveError::in_term("sl backward"))?;
    Ok(Objective {
        value: g.value(sl).item(),
        theta: back.param_grads(POLICY),
        nu: Gradients::new(),
    })
}

pub fn j_total<R: Rng + ?Sized>(
    store: &ParamStore,
    nets: &Nets,
    batch: &Batch<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<TotalObjective, ObjectiveError> {
    let mut g = Graph::new();
    let parts = Parts { oil: true, sl: true };
    let terms = build_terms(&mut g, store, nets, batch, cfg, parts, rng, true)?;
    let (oil, sl) = (terms.oil.expect("oil requested"), terms.sl.expect("sl requested"));
    let total = (|| {
        let weighted = g.scale(sl, cfg.lambda)?;
        g.add(weighted, oil)
    })()
    .map_err(ObjectiveError::in_term("total"))?;
    let back = g.backward(total).map_err(ObjectiveError::in_term("total backward"))?;
    Ok(TotalObjective {
        j_oil: g.value(oil).item(),
        j_sl: g.value(sl).item(),
        j_total: g.value(total).item(),
        theta: back.param_grads(POLICY),
        nu: back.param_grads(VALUE),
    })
}

/// Result of the Donsker-Varadhan testbed.
#[derive(Clone, Debug, PartialEq)]
pub struct DvKl {
    /// Final value of `E_p[x] - log E_q[e^x]`, or `f64::INFINITY` on a support violation.
    pub estimate: f64,
    pub x: Vec<f64>,
}

pub const DV_MAX_SUPPORT: usize = 64;

/// Maximizes `E_p[x] - log E_q[e^x]` over a table `x` by plain gradient
/// ascent; the supremum is `KL(p || q)`.
pub fn dv_kl_testbed(p: &[f64], q: &[f64], steps: usize, rate: f64) -> Result<DvKl, ObjectiveError> {
    if p.len() != q.len() || p.is_empty() || p.len() > DV_MAX_SUPPORT {
        return Err(ObjectiveError::Config(format!(
            "distributions need equal length in 1..={DV_MAX_SUPPORT}, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.iter().chain(q).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ObjectiveError::Config("probabilities must be finite and non-negative".into()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if sp <= 0.0 || sq <= 0.0 {
        return Err(ObjectiveError::Config("distributions must have positive mass".into()));
    }
    let p: Vec<f64> = p.iter().map(|v| v / sp).collect();
    let q: Vec<f64> = q.iter().map(|v| v / sq).collect();
    if p.iter().zip(&q).any(|(&pi, &qi)| pi > 0.0 && qi == 0.0) {
        return Ok(DvKl {
            estimate: f64::INFINITY,
            x: vec![0.0; p.len()],
        });
    }
    // Points outside q's support never enter the objective.
    let support: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0.0).collect();
    let pt = Tensor::row(support.iter().map(|&i| p[i]).collect());
    let log_q = Tensor::row(support.iter().map(|&i| q[i].ln()).collect());
    let mut x = Tensor::zeros(1, support.len());

    let objective = |x: &Tensor| -> Result<(f64, Option<Tensor>), DiffError> {
        let mut g = Graph::new();
        let xv = g.variable(x.clone())?;
        let pv = g.constant(pt.clone())?;
        let lq = g.constant(log_q.clone())?;
        let weighted = g.mul(pv, xv)?;
        let first = g.sum(weighted)?;
        let shifted = g.add(xv, lq)?;
        let second = g.log_sum_exp(shifted)?;
        let obj = g.sub(first, second)?;
        let grad = g.backward(obj)?.grad(xv).cloned();
        Ok((g.value(obj).item(), grad))
    };
    for _ in 0..steps {
        let (_, grad) = objective(&x).map_err(ObjectiveError::in_term("dv objective"))?;
        let grad = grad.expect("x is a variable");
        for (xi, gi) in x.data_mut().iter_mut().zip(grad.data()) {
            *xi += rate * gi;
        }
    }
    let (estimate, _) = objective(&x).map_err(ObjectiveError::in_term("dv objective"))?;
    let mut full = vec![0.0; p.len()];
    for (&i, &xi) in support.iter().zip(x.data()) {
        full[i] = xi;
    }
    Ok(DvKl { estimate, x: full })
}
