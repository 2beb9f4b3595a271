//! Policy network `π_θ(s) = MLP(Encoder_π(s))` and value network
//! `φ_ν(s, a) = MLP(Encoder_φ(s) ⊕ a)`.
//!
//! Two desk-scale encoders stand in for a pretrained language model:
//! a one-hot tabular encoder (lookup + bias + tanh) and a token encoder
//! (embedding mean-pool followed by two tanh affine layers).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DemonstrationDataset, Representation, State, DEFAULT_MAX_STATE_TOKENS};
use crate::diffmath::{DiffError, Graph, Group, ParamEntry, ParamId, ParamStore, Tensor, Var, PROB_CLAMP};
use crate::mdp::BernoulliPolicy;

/// Update group of every leaf created by the policy network.
pub const POLICY: Group = Group(0);
/// Update group of every leaf created by the value network.
pub const VALUE: Group = Group(1);

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    OneHotTabular,
    EmbeddingMeanPool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub embed_dim: usize,
    /// Token vocabulary, or number of states for the tabular encoder.
    pub vocab_size: usize,
    pub output_dim: usize,
}

impl EncoderSpec {
    pub fn tabular(n_states: usize) -> Self {
        Self {
            kind: EncoderKind::OneHotTabular,
            embed_dim: 0,
            vocab_size: n_states,
            output_dim: 64,
        }
    }

    pub fn tokens(vocab_size: usize) -> Self {
        Self {
            kind: EncoderKind::EmbeddingMeanPool,
            embed_dim: 64,
            vocab_size,
            output_dim: 128,
        }
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.output_dim == 0 {
            return Err(NetError::Config("encoder output_dim must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(NetError::Config("encoder vocab_size must be at least 1".into()));
        }
        if self.kind == EncoderKind::EmbeddingMeanPool && self.embed_dim == 0 {
            return Err(NetError::Config("embedding encoder needs embed_dim > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub k: usize,
    pub policy_encoder: EncoderSpec,
    pub value_encoder: EncoderSpec,
    pub hidden: usize,
    /// One encoder reused by both networks (ablation); separate by default.
    pub shared_encoder: bool,
    pub max_state_tokens: usize,
}

impl NetConfig {
    pub fn tabular(n_states: usize, k: usize) -> Self {
        Self {
            k,
            policy_encoder: EncoderSpec::tabular(n_states),
            value_encoder: EncoderSpec::tabular(n_states),
            hidden: 128,
            shared_encoder: false,
            max_state_tokens: DEFAULT_MAX_STATE_TOKENS,
        }
    }

    pub fn tokens(vocab_size: usize, k: usize) -> Self {
        Self {
            k,
            policy_encoder: EncoderSpec::tokens(vocab_size),
            value_encoder: EncoderSpec::tokens(vocab_size),
            hidden: 128,
            shared_encoder: false,
            max_state_tokens: DEFAULT_MAX_STATE_TOKENS,
        }
    }

    /// Default architecture matching a dataset's representation and sizes.
    pub fn for_dataset(dataset: &DemonstrationDataset) -> Self {
        match dataset.representation {
            Representation::Tabular => Self::tabular(dataset.vocab_size, dataset.k),
            Representation::Tokens => Self::tokens(dataset.vocab_size, dataset.k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

impl Affine {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, group: Group) -> Result<Var, DiffError> {
        let w = g.param(store, self.w, group)?;
        let b = g.param(store, self.b, group)?;
        g.affine(x, w, b)
    }

    fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Clone, Debug, PartialEq)]
enum EncoderParams {
    OneHot { table: ParamId, bias: ParamId },
    Embedding { table: ParamId, layers: [Affine; 2] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    params: EncoderParams,
    max_state_tokens: usize,
}

impl Encoder {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.params {
            EncoderParams::OneHot { table, bias } => vec![*table, *bias],
            EncoderParams::Embedding { table, layers } => {
                let mut ids = vec![*table];
                ids.extend(layers.iter().flat_map(Affine::ids));
                ids
            }
        }
    }

    /// `n x output_dim` features for a batch of states.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, states: &[&State], group: Group) -> Result<Var, NetError> {
        let mismatch = |what: &str| {
            NetError::Diff(DiffError::Shape {
                op: "encoder",
                detail: format!("{what} state given to a {:?} encoder", self.spec.kind),
            })
        };
        match &self.params {
            EncoderParams::OneHot { table, bias } => {
                let ids = states
                    .iter()
                    .map(|s| match s {
                        State::Tabular(id) => Ok(*id),
                        State::Tokens(_) => Err(mismatch("token")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let t = g.param(store, *table, group)?;
                let b = g.param(store, *bias, group)?;
                let rows = g.gather(t, ids)?;
                let h = g.add_row(rows, b)?;
                Ok(g.tanh(h)?)
            }
            EncoderParams::Embedding { table, layers } => {
                let bags = states
                    .iter()
                    .map(|s| match s {
                        State::Tokens(tokens) => {
                            let start = tokens.len().saturating_sub(self.max_state_tokens);
                            Ok(tokens[start..].iter().map(|&t| t as usize).collect())
                        }
                        State::Tabular(_) => Err(mismatch("tabular")),
                    })
                    .collect::<Result<Vec<Vec<usize>>, _>>()?;
                let t = g.param(store, *table, group)?;
                let mut h = g.mean_pool(t, bags)?;
                for layer in layers {
                    h = layer.apply(g, store, h, group)?;
                    h = g.tanh(h)?;
                }
                Ok(h)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    encoder: Encoder,
    hidden: Affine,
    out: Affine,
    k: usize,
}

impl PolicyNet {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head_ids(&self) -> Vec<ParamId> {
        [self.hidden.ids(), self.out.ids()].concat()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.head_ids());
        ids
    }

    /// `n x k` sub-action probabilities, clamped to `[1e-6, 1 - 1e-6]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, states: &[&State]) -> Result<Var, NetError> {
        let h = self.encoder.encode(g, store, states, POLICY)?;
        let h = self.hidden.apply(g, store, h, POLICY)?;
        let h = g.tanh(h)?;
        let logits = self.out.apply(g, store, h, POLICY)?;
        let p = g.sigmoid(logits)?;
        Ok(g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    encoder: Encoder,
    hidden: Affine,
    out: Affine,
    k: usize,
}

impl ValueNet {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head_ids(&self) -> Vec<ParamId> {
        [self.hidden.ids(), self.out.ids()].concat()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.head_ids());
        ids
    }

    /// `n x 1` values for states paired with `n x k` action rows (hard or relaxed).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, states: &[&State], actions: Var) -> Result<Var, NetError> {
        let (rows, cols) = g.value(actions).shape();
        if cols != self.k || rows != states.len() {
            return Err(NetError::Diff(DiffError::Shape {
                op: "value_forward",
                detail: format!("actions {rows}x{cols} for {} states with k={}", states.len(), self.k),
            }));
        }
        let h = self.encoder.encode(g, store, states, VALUE)?;
        let x = g.concat_cols(h, actions)?;
        let h = self.hidden.apply(g, store, x, VALUE)?;
        let h = g.tanh(h)?;
        Ok(self.out.apply(g, store, h, VALUE)?)
    }
}

/// Both networks plus the configuration that built them.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub config: NetConfig,
    pub policy: PolicyNet,
    pub value: ValueNet,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
}

fn new_affine(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> Affine {
    let w = if zero {
        Tensor::zeros(fan_in, fan_out)
    } else {
        uniform_tensor(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    };
    Affine {
        w: store.add(format!("{name}.w"), w),
        b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
    }
}

fn new_encoder(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &EncoderSpec, max_state_tokens: usize) -> Encoder {
    let params = match spec.kind {
        EncoderKind::OneHotTabular => EncoderParams::OneHot {
            // one active input per row, so the fan-in bound is 1
            table: store.add(format!("{name}.table"), uniform_tensor(rng, spec.vocab_size, spec.output_dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, spec.output_dim)),
        },
        EncoderKind::EmbeddingMeanPool => EncoderParams::Embedding {
            table: store.add(format!("{name}.table"), uniform_tensor(rng, spec.vocab_size, spec.embed_dim, 1.0)),
            layers: [
                new_affine(store, rng, &format!("{name}.layer0"), spec.embed_dim, spec.output_dim, false),
                new_affine(store, rng, &format!("{name}.layer1"), spec.output_dim, spec.output_dim, false),
            ],
        },
    };
    Encoder {
        spec: spec.clone(),
        params,
        max_state_tokens,
    }
}

/// Fresh parameters: uniform fan-in initialization, zero biases, and a zero
/// policy output layer so the initial policy is 0.5 everywhere.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<(ParamStore, Nets), NetError> {
    config.policy_encoder.validate()?;
    config.value_encoder.validate()?;
    if config.k == 0 || config.hidden == 0 {
        return Err(NetError::Config("k and hidden must be positive".into()));
    }
    if config.shared_encoder && config.policy_encoder != config.value_encoder {
        return Err(NetError::Config("a shared encoder needs identical encoder specs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let k = config.k;

    let policy_encoder = if config.shared_encoder {
        new_encoder(&mut store, &mut rng, "shared.encoder", &config.policy_encoder, config.max_state_tokens)
    } else {
        new_encoder(&mut store, &mut rng, "policy.encoder", &config.policy_encoder, config.max_state_tokens)
    };
    let policy = PolicyNet {
        hidden: new_affine(&mut store, &mut rng, "policy.head0", config.policy_encoder.output_dim, config.hidden, false),
        out: new_affine(&mut store, &mut rng, "policy.head1", config.hidden, k, true),
        encoder: policy_encoder.clone(),
        k,
    };
    let value_encoder = if config.shared_encoder {
        policy_encoder
    } else {
        new_encoder(&mut store, &mut rng, "value.encoder", &config.value_encoder, config.max_state_tokens)
    };
    let value = ValueNet {
        hidden: new_affine(&mut store, &mut rng, "value.head0", config.value_encoder.output_dim + k, config.hidden, false),
        out: new_affine(&mut store, &mut rng, "value.head1", config.hidden, 1, false),
        encoder: value_encoder,
        k,
    };
    Ok((
        store,
        Nets {
            config: config.clone(),
            policy,
            value,
        },
    ))
}

impl Nets {
    /// Parameters of the feed-forward heads only (no encoder).
    pub fn head_ids(&self) -> Vec<ParamId> {
        let mut ids = self.policy.head_ids();
        ids.extend(self.value.head_ids());
        ids
    }

    /// Policy probabilities for many states, evaluated in chunks.
    pub fn predict(&self, store: &ParamStore, states: &[&State]) -> Result<Vec<Vec<f64>>, NetError> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(512) {
            let mut g = Graph::new();
            let p = self.policy.forward(&mut g, store, chunk)?;
            let t = g.value(p);
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    /// The learned policy as a per-state Bernoulli table (tabular encoders only).
    pub fn tabular_policy(&self, store: &ParamStore) -> Result<BernoulliPolicy, NetError> {
        if self.config.policy_encoder.kind != EncoderKind::OneHotTabular {
            return Err(NetError::Config("tabular_policy needs a one-hot tabular encoder".into()));
        }
        let states: Vec<State> = (0..self.config.policy_encoder.vocab_size).map(State::Tabular).collect();
        let refs: Vec<&State> = states.iter().collect();
        let probs = self.predict(store, &refs)?;
        BernoulliPolicy::new(probs).map_err(|e| NetError::Config(e.to_string()))
    }
}

/// On-disk checkpoint: network configuration plus a flat map from parameter
/// name to shape and row-major values. `metadata` carries run provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub metadata: serde_json::Value,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn new(nets: &Nets, store: &ParamStore, metadata: serde_json::Value) -> Self {
        Self {
            net_config: nets.config.clone(),
            metadata,
            params: store.to_entries(),
        }
    }

    pub fn restore(&self) -> Result<(ParamStore, Nets), NetError> {
        let (mut store, nets) = init_params(&self.net_config, 0)?;
        store.load_entries(&self.params)?;
        Ok((store, nets))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let r = BufReader::new(File::open(path)?);
        serde_json::from_reader(r).map_err(|e| NetError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::gradcheck::{central_difference, max_relative_error};
    use crate::diffmath::{adam_step, AdamConfig, AdamState, Direction, Gradients};

    fn tabular_nets(seed: u64) -> (ParamStore, Nets) {
        init_params(&NetConfig::tabular(5, 3), seed).unwrap()
    }

    #[test]
    fn initial_policy_is_uniform() {
        let (store, nets) = tabular_nets(1);
        let states: Vec<State> = (0..5).map(State::Tabular).collect();
        let refs: Vec<&State> = states.iter().collect();
        for row in nets.predict(&store, &refs).unwrap() {
            assert_eq!(row, vec![0.5; 3]);
        }
        let (tstore, tnets) = init_params(&NetConfig::tokens(20, 4), 1).unwrap();
        let s = State::Tokens(vec![3, 7, 19]);
        assert_eq!(tnets.predict(&tstore, &[&s]).unwrap()[0], vec![0.5; 4]);
    }

    #[test]
    fn seeds_control_initialization() {
        assert_eq!(tabular_nets(4).0, tabular_nets(4).0);
        assert_ne!(tabular_nets(4).0, tabular_nets(5).0);
    }

    #[test]
    fn forward_is_pure() {
        let (mut store, nets) = tabular_nets(2);
        let out = nets.policy.head_ids()[2];
        store.get_mut(out).data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * i as f64);
        let s = State::Tabular(3);
        let a = nets.predict(&store, &[&s, &s]).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a, nets.predict(&store, &[&s, &s]).unwrap());
    }

    #[test]
    fn zero_value_head_outputs_zero() {
        let (mut store, nets) = tabular_nets(3);
        for id in nets.value.head_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let states = [State::Tabular(0), State::Tabular(4)];
        let refs: Vec<&State> = states.iter().collect();
        let a = g.constant(Tensor::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.2, 0.4, 0.9])).unwrap();
        let v = nets.value.forward(&mut g, &store, &refs, a).unwrap();
        assert_eq!(g.value(v).data(), &[0.0, 0.0]);
    }

    #[test]
    fn value_depends_on_action_and_matches_finite_differences() {
        let (store, nets) = init_params(&NetConfig::tokens(30, 4), 9).unwrap();
        let states = [State::Tokens(vec![1, 2, 3]), State::Tokens(vec![29, 0])];
        let refs: Vec<&State> = states.iter().collect();
        let action = vec![0.3, 0.9, 0.1, 0.5, 1.0, 0.0, 0.0, 1.0];
        let eval = |a: &[f64]| -> f64 {
            let mut g = Graph::new();
            let av = g.constant(Tensor::from_vec(2, 4, a.to_vec())).unwrap();
            let v = nets.value.forward(&mut g, &store, &refs, av).unwrap();
            let s = g.sum(v).unwrap();
            g.value(s).item()
        };
        let mut g = Graph::new();
        let av = g.variable(Tensor::from_vec(2, 4, action.clone())).unwrap();
        let v = nets.value.forward(&mut g, &store, &refs, av).unwrap();
        let s = g.sum(v).unwrap();
        let analytic = g.backward(s).unwrap().grad(av).unwrap().clone();
        for i in 0..action.len() {
            let mut plus = action.clone();
            let mut minus = action.clone();
            plus[i] += 1e-5;
            minus[i] -= 1e-5;
            let numeric = (eval(&plus) - eval(&minus)) / 2e-5;
            let a = analytic.data()[i];
            assert!((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6) < 1e-4);
        }
        let mut other = action.clone();
        other[0] = 0.8;
        assert_ne!(eval(&action), eval(&other));
    }

    #[test]
    fn policy_gradients_match_finite_differences() {
        let (mut store, nets) = init_params(&NetConfig::tokens(25, 3), 4).unwrap();
        let out = nets.policy.head_ids()[2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.get_mut(out).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let states = [State::Tokens(vec![1, 4, 4, 9]), State::Tokens(vec![]), State::Tokens(vec![24])];
        let refs: Vec<&State> = states.iter().collect();
        let f = |s: &ParamStore| -> Result<(Graph, Var), DiffError> {
            let mut g = Graph::new();
            let p = nets.policy.forward(&mut g, s, &refs).map_err(|e| match e {
                NetError::Diff(d) => d,
                other => DiffError::Domain(other.to_string()),
            })?;
            let l = g.log(p)?;
            let out = g.sum(l)?;
            Ok((g, out))
        };
        let (g, o) = f(&store).unwrap();
        let analytic = g.backward(o).unwrap().param_grads(POLICY);
        let ids = nets.policy.param_ids();
        let numeric = central_difference(&store, &ids, 1e-5, |s| {
            let (g, o) = f(s)?;
            Ok(g.value(o).item())
        })
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn one_hot_policy_recovers_empirical_frequencies() {
        // The BCE minimizer for a single state is the empirical mean of each bit.
        let labels = [[1.0, 0.0, 1.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.0]];
        let target = [0.8, 0.2, 0.4];
        let (mut store, nets) = tabular_nets(7);
        let s = State::Tabular(2);
        let refs = vec![&s; labels.len()];
        let y = Tensor::from_vec(labels.len(), 3, labels.iter().flatten().copied().collect());
        let mut state = AdamState::new(AdamConfig::default());
        for _ in 0..3000 {
            let mut g = Graph::new();
            let p = nets.policy.forward(&mut g, &store, &refs).unwrap();
            let yv = g.constant(y.clone()).unwrap();
            let lp = g.log(p).unwrap();
            let q = g.one_minus(p).unwrap();
            let lq = g.log(q).unwrap();
            let ny = g.one_minus(yv).unwrap();
            let a = g.mul(yv, lp).unwrap();
            let b = g.mul(ny, lq).unwrap();
            let ll = g.add(a, b).unwrap();
            let m = g.mean(ll).unwrap();
            let loss = g.scale(m, -1.0).unwrap();
            let grads: Gradients = g.backward(loss).unwrap().param_grads(POLICY);
            adam_step(&mut store, &grads, &mut state, 0.01, Direction::Descent).unwrap();
        }
        let p = &nets.predict(&store, &[&s]).unwrap()[0];
        for (pj, tj) in p.iter().zip(target) {
            assert!((pj - tj).abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn separate_encoders_have_disjoint_parameters() {
        let (_, nets) = tabular_nets(0);
        let pol = nets.policy.param_ids();
        assert!(nets.value.param_ids().iter().all(|id| !pol.contains(id)));

        let mut cfg = NetConfig::tabular(5, 3);
        cfg.shared_encoder = true;
        let (_, shared) = init_params(&cfg, 0).unwrap();
        assert_eq!(shared.policy.encoder().param_ids(), shared.value.encoder().param_ids());
        let heads = shared.value.head_ids();
        assert!(heads.iter().all(|id| !shared.policy.param_ids().contains(id)));
    }

    #[test]
    fn representation_mismatch_is_a_shape_error() {
        let (store, nets) = tabular_nets(0);
        let mut g = Graph::new();
        let s = State::Tokens(vec![1]);
        assert!(matches!(
            nets.policy.forward(&mut g, &store, &[&s]),
            Err(NetError::Diff(DiffError::Shape { op: "encoder", .. }))
        ));
        let a = g.constant(Tensor::zeros(1, 2)).unwrap();
        let t = State::Tabular(0);
        assert!(matches!(
            nets.value.forward(&mut g, &store, &[&t], a),
            Err(NetError::Diff(DiffError::Shape { op: "value_forward", .. }))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (store, nets) = tabular_nets(11);
        let ck = Checkpoint::new(&nets, &store, serde_json::json!({"seed": 11}));
        let dir = std::env::temp_dir().join(format!("sdoil-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let (store2, nets2) = loaded.restore().unwrap();
        assert_eq!(store2, store);
        assert_eq!(nets2, nets);
        std::fs::remove_dir_all(&dir).ok();
    }
}
