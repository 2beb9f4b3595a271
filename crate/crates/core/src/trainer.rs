//! Simultaneous saddle-point training: one forward/backward per step, then a
//! ν update and a θ update from the same parameter snapshot. The SL baseline
//! uses the same loop with the OIL term removed.

use std::io::Write;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ActionVector, DemonstrationDataset, State, TransitionTuple};
use crate::diffmath::{adam_step, AdamConfig, AdamState, DiffError, Direction, Gradients, Graph, LrSchedule, ParamId, ParamStore};
use crate::evalkit::metrics::{exact_match_accuracy, flatten_pairs, neg_log_prob, youden_threshold};
use crate::nets::{init_params, NetConfig, NetError, Nets, POLICY, VALUE};
use crate::objectives::{build_terms, Batch, ObjectiveConfig, ObjectiveError, Parts, SaddleDirection};

/// Consecutive numeric faults after which a run is declared diverged.
pub const MAX_CONSECUTIVE_FAULTS: usize = 10;
/// Validation tuples used for the logged objective values.
const LOG_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Sd,
    SlBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Scope {
    HeadOnly,
    AllParameters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub base_rate: f64,
    pub rate_mult_pi: f64,
    pub rate_mult_phi: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub eval_every: usize,
    pub l2_weight: f64,
    pub l2_scope: L2Scope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            base_rate: 1e-3,
            rate_mult_pi: 1.0,
            rate_mult_phi: 0.1,
            batch_size: 64,
            max_iterations: 30_000,
            warmup_fraction: 0.1,
            seed: 0,
            mode: TrainMode::Sd,
            eval_every: 250,
            l2_weight: 0.0,
            l2_scope: L2Scope::HeadOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.objective.validate()?;
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad(format!("base_rate must be positive, got {}", self.base_rate));
        }
        for (name, v) in [("rate_mult_pi", self.rate_mult_pi), ("rate_mult_phi", self.rate_mult_phi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.rate_mult_pi == 0.0 && self.rate_mult_phi == 0.0 {
            return bad("at least one rate multiplier must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return bad(format!("l2_weight must be finite and >= 0, got {}", self.l2_weight));
        }
        Ok(())
    }

    /// `(θ, ν)` multipliers on the scheduled rate, scaled so the larger of
    /// the two never exceeds the base rate.
    pub fn rate_multipliers(&self) -> (f64, f64) {
        let cap = self.rate_mult_pi.max(self.rate_mult_phi).max(1.0);
        (self.rate_mult_pi / cap, self.rate_mult_phi / cap)
    }

    pub fn schedule(&self) -> Result<LrSchedule, TrainError> {
        Ok(LrSchedule::new(self.base_rate, self.warmup_fraction, self.max_iterations)?)
    }
}

/// Optimizer state for both players plus the fault counter.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub theta: AdamState,
    pub nu: AdamState,
    pub consecutive_faults: usize,
}

impl TrainerState {
    pub fn new() -> Self {
        Self {
            theta: AdamState::new(AdamConfig::default()),
            nu: AdamState::new(AdamConfig::default()),
            consecutive_faults: 0,
        }
    }
}

impl Default for TrainerState {
    fn default() -> Self {
        Self::new()
    }
}

/// Objective values observed during one step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub j_oil: Option<f64>,
    pub j_sl: f64,
}

fn add_l2(grads: &mut Gradients, store: &ParamStore, ids: &[ParamId], weight: f64, direction: Direction) {
    if weight == 0.0 {
        return;
    }
    // descent minimizes J + w/2 |p|^2, ascent maximizes J - w/2 |p|^2
    let coeff = -direction.sign() * weight;
    for id in ids {
        if let Some(g) = grads.get_mut(id) {
            for (gi, pi) in g.data_mut().iter_mut().zip(store.get(*id).data()) {
                *gi += coeff * pi;
            }
        }
    }
}

fn all_finite(grads: &Gradients) -> bool {
    grads.values().all(|t| t.is_finite())
}

/// One training step at schedule position `step`. On a numeric fault no
/// parameter changes and the fault counter is bumped.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    store: &mut ParamStore,
    nets: &Nets,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
    state: &mut TrainerState,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses, TrainError> {
    let lr = cfg.schedule()?.lr_at(step)?;
    let (mult_theta, mult_nu) = cfg.rate_multipliers();
    let outcome = (|| -> Result<(StepLosses, Gradients, Option<Gradients>), TrainError> {
        let mut g = Graph::new();
        let sd = cfg.mode == TrainMode::Sd;
        let parts = Parts { oil: sd, sl: true };
        let terms = build_terms(&mut g, store, nets, batch, &cfg.objective, parts, rng, true)?;
        let sl = terms.sl.expect("sl requested");
        let weighted_sl = g.scale(sl, cfg.objective.lambda)?;
        // θ always descends; the OIL sign follows the saddle direction.
        let sign = match cfg.objective.saddle_direction {
            SaddleDirection::Paper => 1.0,
            SaddleDirection::Reversed => -1.0,
        };
        let (theta_loss, oil) = match terms.oil {
            Some(oil) => {
                let signed = g.scale(oil, sign)?;
                (g.add(weighted_sl, signed)?, Some(oil))
            }
            None => (weighted_sl, None),
        };
        let back = g.backward(theta_loss)?;
        let mut theta = back.param_grads(POLICY);
        // The SL term has no ν dependence, so the ν part of this single
        // backward pass is `sign · ∇ν Ĵ_OIL`.
        let nu = oil.map(|_| {
            let mut nu = back.param_grads(VALUE);
            if sign < 0.0 {
                nu.values_mut().for_each(|t| *t = t.map(|v| -v));
            }
            nu
        });
        let losses = StepLosses {
            j_oil: oil.map(|v| g.value(v).item()),
            j_sl: g.value(sl).item(),
        };
        let policy_ids = if cfg.l2_scope == L2Scope::HeadOnly {
            nets.policy.head_ids()
        } else {
            theta.keys().copied().collect()
        };
        add_l2(&mut theta, store, &policy_ids, cfg.l2_weight, Direction::Descent);
        Ok((losses, theta, nu))
    })();

    let (losses, theta, nu) = match outcome {
        Ok((losses, theta, mut nu)) => {
            let (_, nu_direction) = cfg.objective.saddle_direction.directions();
            if let Some(nu) = nu.as_mut() {
                let value_ids = if cfg.l2_scope == L2Scope::HeadOnly {
                    nets.value.head_ids()
                } else {
                    nu.keys().copied().collect()
                };
                add_l2(nu, store, &value_ids, cfg.l2_weight, nu_direction);
            }
            if !all_finite(&theta) || !nu.as_ref().is_none_or(all_finite) {
                state.consecutive_faults += 1;
                return Err(TrainError::Diff(DiffError::NumericFault { op: "gradient" }));
            }
            (losses, theta, nu)
        }
        Err(e) => {
            state.consecutive_faults += 1;
            return Err(e);
        }
    };

    // Both gradient sets come from the pre-update snapshot.
    let (_, nu_direction) = cfg.objective.saddle_direction.directions();
    if let Some(nu) = nu {
        adam_step(store, &nu, &mut state.nu, lr * mult_nu, nu_direction)?;
    }
    adam_step(store, &theta, &mut state.theta, lr * mult_theta, Direction::Descent)?;
    state.consecutive_faults = 0;
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub j_oil: f64,
    pub j_sl: f64,
    pub val_nlp: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub diverged: bool,
    pub faults: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,j_oil,j_sl,val_nlp,val_acc";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.iteration, r.j_oil, r.j_sl, r.val_nlp, r.val_acc)?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&TrainRecord> {
        self.records.iter().min_by(|a, b| a.val_nlp.total_cmp(&b.val_nlp))
    }
}

/// Trained networks at the best validation checkpoint, plus the full log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub nets: Nets,
    pub store: ParamStore,
    pub log: TrainLog,
    pub best: TrainRecord,
}

struct Evaluator<'a> {
    states: Vec<&'a State>,
    labels: Vec<ActionVector>,
    log_batch: Batch<'a>,
}

impl<'a> Evaluator<'a> {
    fn new(tuples: &'a [TransitionTuple]) -> Result<Self, TrainError> {
        let log_batch = Batch::new(tuples.iter().take(LOG_BATCH).collect())?;
        Ok(Self {
            states: tuples.iter().map(|t| &t.state).collect(),
            labels: tuples.iter().map(|t| t.action.clone()).collect(),
            log_batch,
        })
    }

    fn record(
        &self,
        iteration: usize,
        store: &ParamStore,
        nets: &Nets,
        cfg: &ObjectiveConfig,
    ) -> Result<TrainRecord, TrainError> {
        let eval_err = |e: crate::evalkit::EvalError| TrainError::Eval(e.to_string());
        let preds = nets.predict(store, &self.states)?;
        let val_nlp = neg_log_prob(&preds, &self.labels).map_err(eval_err)?;
        let pairs = flatten_pairs(&preds, &self.labels).map_err(eval_err)?;
        let threshold = youden_threshold(&pairs).unwrap_or(0.5);
        let val_acc = exact_match_accuracy(&preds, &self.labels, threshold).map_err(eval_err)?;

        let mut g = Graph::new();
        let parts = Parts { oil: true, sl: true };
        // Logged objectives use cancel-sampling so they are noise-free.
        let mut log_cfg = cfg.clone();
        log_cfg.sampling_mode = crate::objectives::SamplingMode::CancelSampling;
        let terms = build_terms(
            &mut g,
            store,
            nets,
            &self.log_batch,
            &log_cfg,
            parts,
            &mut ChaCha8Rng::seed_from_u64(0),
            true,
        )?;
        Ok(TrainRecord {
            iteration,
            j_oil: g.value(terms.oil.expect("oil requested")).item(),
            j_sl: g.value(terms.sl.expect("sl requested")).item(),
            val_nlp,
            val_acc,
        })
    }
}

/// Runs the full loop from fresh parameters seeded by `cfg.seed`.
pub fn train(
    train_set: &DemonstrationDataset,
    validation: Option<&DemonstrationDataset>,
    net_config: &NetConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (store, nets) = init_params(net_config, cfg.seed)?;
    train_from(train_set, validation, nets, store, cfg)
}

/// Runs the full loop from the given parameters.
pub fn train_from(
    train_set: &DemonstrationDataset,
    validation: Option<&DemonstrationDataset>,
    nets: Nets,
    mut store: ParamStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let eval_tuples = match validation {
        Some(v) if !v.is_empty() => &v.tuples,
        _ => {
            warn!("no validation data; checkpoints are selected on the training set");
            &train_set.tuples
        }
    };
    let evaluator = Evaluator::new(eval_tuples)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let mut state = TrainerState::new();
    let mut log = TrainLog::default();
    let first = evaluator.record(0, &store, &nets, &cfg.objective)?;
    let mut best = (first.clone(), store.clone());
    log.records.push(first);

    for step in 0..cfg.max_iterations {
        if cursor >= order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = Batch::new(order[cursor..end].iter().map(|&i| &train_set.tuples[i]).collect())?;
        cursor = end;

        match train_step(&mut store, &nets, &batch, cfg, &mut state, step, &mut noise_rng) {
            Ok(_) => {}
            Err(TrainError::Diff(DiffError::NumericFault { op }))
            | Err(TrainError::Objective(ObjectiveError::NumericFault { op, .. })) => {
                log.faults += 1;
                warn!("step {step}: numeric fault in {op}; step skipped");
                if state.consecutive_faults >= MAX_CONSECUTIVE_FAULTS {
                    warn!("run diverged after {MAX_CONSECUTIVE_FAULTS} consecutive faults");
                    log.diverged = true;
                    break;
                }
            }
            Err(e) => return Err(e),
        }

        let iteration = step + 1;
        if iteration % cfg.eval_every == 0 || iteration == cfg.max_iterations {
            let record = match evaluator.record(iteration, &store, &nets, &cfg.objective) {
                Ok(r) if r.val_nlp.is_finite() => r,
                Ok(_) | Err(TrainError::Objective(ObjectiveError::NumericFault { .. })) => {
                    log.diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            debug!(
                "iter {iteration}: j_oil {:.5} j_sl {:.5} val_nlp {:.5} val_acc {:.4}",
                record.j_oil, record.j_sl, record.val_nlp, record.val_acc
            );
            if record.val_nlp < best.0.val_nlp {
                best = (record.clone(), store.clone());
            }
            log.records.push(record);
        }
    }
    Ok(TrainOutcome {
        nets,
        store: best.1,
        log,
        best: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{AdamConfig, Tensor};
    use crate::mdp::{rollout_dataset, BernoulliPolicy, TabularMdp};
    use crate::objectives::{j_oil, j_sl, SamplingMode};

    fn small_config(n_states: usize, k: usize) -> NetConfig {
        let mut c = NetConfig::tabular(n_states, k);
        c.hidden = 16;
        c.policy_encoder.output_dim = 8;
        c.value_encoder.output_dim = 8;
        c
    }

    /// Two-state chain where the expert's action depends on the state.
    fn chain() -> (TabularMdp, BernoulliPolicy) {
        let k = 2;
        let mut transitions = Vec::new();
        for s in 0..2 {
            for _ in 0..4 {
                transitions.push(vec![(1 - s, 1.0)]);
            }
        }
        let expert = BernoulliPolicy::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mdp = TabularMdp {
            n_states: 2,
            k,
            p0: vec![1.0, 0.0],
            transitions,
            expert_policy: expert.clone(),
            horizon: 4,
        };
        (mdp, expert)
    }

    fn data() -> DemonstrationDataset {
        let (mdp, expert) = chain();
        rollout_dataset(&mdp, &expert, 8, 1).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            max_iterations: 40,
            eval_every: 10,
            batch_size: 8,
            base_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rate_multipliers_are_capped() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.rate_multipliers(), (1.0, 0.1));
        cfg.rate_mult_pi = 100.0;
        cfg.rate_mult_phi = 1.0;
        assert_eq!(cfg.rate_multipliers(), (1.0, 0.01));
        cfg.rate_mult_pi = 0.1;
        assert_eq!(cfg.rate_multipliers(), (0.1, 1.0));
    }

    #[test]
    fn zero_iterations_returns_initial_record() {
        let ds = data();
        let mut cfg = quick_cfg();
        cfg.max_iterations = 0;
        let out = train(&ds, Some(&ds), &small_config(2, 2), &cfg).unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert_eq!(out.log.records[0].iteration, 0);
        let (fresh, _) = init_params(&small_config(2, 2), cfg.seed).unwrap();
        assert_eq!(out.store, fresh);
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best_checkpoint() {
        let ds = data();
        let a = train(&ds, Some(&ds), &small_config(2, 2), &quick_cfg()).unwrap();
        let b = train(&ds, Some(&ds), &small_config(2, 2), &quick_cfg()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.store, b.store);
        let iters: Vec<usize> = a.log.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 10, 20, 30, 40]);
        assert!(a.log.records.iter().all(|r| a.best.val_nlp <= r.val_nlp));
        let states = [State::Tabular(0)];
        let refs: Vec<&State> = states.iter().collect();
        let nlp = neg_log_prob(&a.nets.predict(&a.store, &refs).unwrap(), &[ActionVector::new(vec![1, 0]).unwrap()]);
        assert!(nlp.unwrap().is_finite());
    }

    #[test]
    fn update_counts_match_iterations() {
        let ds = data();
        let (mut store, nets) = init_params(&small_config(2, 2), 0).unwrap();
        let cfg = quick_cfg();
        let mut state = TrainerState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = Batch::from_slice(&ds.tuples[..8]).unwrap();
        for step in 1..6 {
            train_step(&mut store, &nets, &batch, &cfg, &mut state, step, &mut rng).unwrap();
        }
        assert_eq!(state.theta.step(), 5);
        assert_eq!(state.nu.step(), 5);
    }

    #[test]
    fn zero_phi_rate_freezes_value_net() {
        let ds = data();
        let (mut store, nets) = init_params(&small_config(2, 2), 0).unwrap();
        let before = store.clone();
        let mut cfg = quick_cfg();
        cfg.rate_mult_phi = 0.0;
        let mut state = TrainerState::new();
        let batch = Batch::from_slice(&ds.tuples[..8]).unwrap();
        train_step(&mut store, &nets, &batch, &cfg, &mut state, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in nets.value.param_ids() {
            assert_eq!(store.get(id), before.get(id));
        }
        assert!(nets.policy.param_ids().iter().any(|&id| store.get(id) != before.get(id)));
    }

    #[test]
    fn sl_baseline_matches_sd_without_oil() {
        let ds = data();
        let (store0, nets) = init_params(&small_config(2, 2), 3).unwrap();
        let batch = Batch::from_slice(&ds.tuples[..8]).unwrap();
        let mut cfg = quick_cfg();
        cfg.mode = TrainMode::SlBaseline;
        let mut sl_store = store0.clone();
        let mut state = TrainerState::new();
        train_step(&mut sl_store, &nets, &batch, &cfg, &mut state, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in nets.value.param_ids() {
            assert_eq!(sl_store.get(id), store0.get(id));
        }
        assert_eq!(state.nu.step(), 0);

        // The same θ update by hand from the pure SL gradient.
        let grads = j_sl(&store0, &nets, &batch).unwrap().theta;
        let mut manual = store0.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        let lr = cfg.schedule().unwrap().lr_at(5).unwrap() * cfg.rate_multipliers().0;
        adam_step(&mut manual, &grads, &mut adam, lr, Direction::Descent).unwrap();
        assert_eq!(manual, sl_store);
    }

    #[test]
    fn large_lambda_step_follows_sl_gradient() {
        let ds = data();
        let (mut store0, nets) = init_params(&small_config(2, 2), 5).unwrap();
        // a non-zero output layer gives every θ coordinate an SL gradient
        let out = nets.policy.head_ids()[2];
        store0.get_mut(out).data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * ((i % 5) as f64 - 2.0));
        let batch = Batch::from_slice(&ds.tuples[..8]).unwrap();
        let mut cfg = quick_cfg();
        cfg.objective.lambda = 1e6;
        let mut sd = store0.clone();
        train_step(&mut sd, &nets, &batch, &cfg, &mut TrainerState::new(), 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        cfg.mode = TrainMode::SlBaseline;
        let mut sl = store0.clone();
        train_step(&mut sl, &nets, &batch, &cfg, &mut TrainerState::new(), 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for id in nets.policy.param_ids() {
            let da: Vec<f64> = sd.get(id).data().iter().zip(store0.get(id).data()).map(|(a, b)| a - b).collect();
            let db: Vec<f64> = sl.get(id).data().iter().zip(store0.get(id).data()).map(|(a, b)| a - b).collect();
            let (ta, tb) = (Tensor::row(da), Tensor::row(db));
            dot += ta.dot(&tb);
            na += ta.dot(&ta);
            nb += tb.dot(&tb);
        }
        assert!(dot / (na.sqrt() * nb.sqrt()) > 0.99);
    }

    #[test]
    fn lambda_zero_moves_theta_only_through_oil() {
        let ds = data();
        let (store, nets) = init_params(&small_config(2, 2), 2).unwrap();
        let batch = Batch::from_slice(&ds.tuples[..8]).unwrap();
        let mut cfg = ObjectiveConfig::default();
        cfg.lambda = 0.0;
        let sl = j_sl(&store, &nets, &batch).unwrap();
        // zero output layer: the SL gradient reaches only that layer
        let out_layer = nets.policy.head_ids()[2];
        for (id, g) in &sl.theta {
            if *id != out_layer && nets.policy.head_ids()[3] != *id {
                assert!(g.data().iter().all(|v| *v == 0.0));
            }
        }
        let oil = j_oil(&store, &nets, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(oil.theta.values().any(|g| g.norm() > 0.0));
    }

    #[test]
    fn gumbel_training_runs() {
        let ds = data();
        let mut cfg = quick_cfg();
        cfg.objective.sampling_mode = SamplingMode::GumbelSample;
        cfg.objective.saddle_direction = SaddleDirection::Reversed;
        cfg.l2_weight = 1e-3;
        cfg.l2_scope = L2Scope::AllParameters;
        let out = train(&ds, Some(&ds), &small_config(2, 2), &cfg).unwrap();
        assert!(!out.log.diverged);
        let mut csv = Vec::new();
        out.log.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("iteration,j_oil,j_sl,val_nlp,val_acc\n0,"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ds = data();
        for cfg in [
            TrainConfig { batch_size: 0, ..quick_cfg() },
            TrainConfig { base_rate: 0.0, ..quick_cfg() },
            TrainConfig { warmup_fraction: 1.0, ..quick_cfg() },
        ] {
            assert!(matches!(train(&ds, None, &small_config(2, 2), &cfg), Err(TrainError::Config(_))));
        }
        let empty = DemonstrationDataset::empty(2, 2, ds.representation, ds.split);
        assert!(matches!(train(&empty, None, &small_config(2, 2), &quick_cfg()), Err(TrainError::EmptyDataset)));
    }
}
