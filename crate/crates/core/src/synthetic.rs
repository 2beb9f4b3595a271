//! Ground-truth environments and expert corpora.
//!
//! *Drift MDPs* split the states into an expert-reachable "on" half and an
//! "off" half. The expert's mode action in state `s` leads to a distribution
//! `E_s` over on-states; any other action leads to
//! `(1 - drift) E_s + drift D_{s,a}` with `D_{s,a}` supported on off-states,
//! so a single mistake moves total variation `drift` of the next-state mass
//! off the expert path.
//!
//! *Token corpora* simulate topic-driven dialogues whose agent utterances
//! reveal the previous action through the reserved tokens `0..k`.

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActionVector, DemonstrationDataset, DialogueTurn, Representation, Split, State, TransitionTuple};
use crate::mdp::{rollout_dataset, BernoulliPolicy, MdpError, TabularMdp, TransitionRow, MAX_K, MAX_STATES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMdpSpec {
    pub n_states: usize,
    pub k: usize,
    pub horizon: usize,
    /// Support size of every successor distribution (`E_s`, `D_{s,a}`, `p0`).
    pub branching: usize,
    pub drift_strength: f64,
    pub expert_determinism: f64,
    pub seed: u64,
}

impl DriftMdpSpec {
    fn halves(&self) -> (usize, usize) {
        let on = self.n_states.div_ceil(2);
        (on, self.n_states - on)
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        if self.n_states > MAX_STATES || self.k > MAX_K {
            return Err(MdpError::Capacity(format!(
                "{} states with k={} exceeds the {MAX_STATES}-state, k={MAX_K} limit",
                self.n_states, self.k
            )));
        }
        if self.k == 0 || self.horizon == 0 || self.n_states < 2 {
            return Err(MdpError::Invalid("need k >= 1, horizon >= 1 and at least 2 states".into()));
        }
        for (name, v) in [("drift_strength", self.drift_strength), ("expert_determinism", self.expert_determinism)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MdpError::Invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let (on, off) = self.halves();
        if self.branching == 0 || self.branching > on || (self.drift_strength > 0.0 && self.branching > off) {
            return Err(MdpError::Construction(format!(
                "branching {} infeasible with {on} on-path and {off} off-path states",
                self.branching
            )));
        }
        Ok(())
    }
}

/// Random distribution over `branching` distinct states drawn from `pool`.
fn random_row(rng: &mut ChaCha8Rng, pool: std::ops::Range<usize>, branching: usize) -> TransitionRow {
    let len = pool.len();
    let picks = rand::seq::index::sample(rng, len, branching);
    let weights: Vec<f64> = (0..branching).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let mut row: TransitionRow = picks.into_iter().zip(weights).map(|(i, w)| (pool.start + i, w / total)).collect();
    row.sort_by_key(|(s, _)| *s);
    row
}

fn mix(expert: &TransitionRow, detour: &TransitionRow, drift: f64) -> TransitionRow {
    let mut row: TransitionRow = expert.iter().map(|&(s, p)| (s, (1.0 - drift) * p)).collect();
    row.extend(detour.iter().map(|&(s, p)| (s, drift * p)));
    row.retain(|(_, p)| *p > 0.0);
    row
}

/// The expert's mode action per state.
pub fn expert_modes(mdp: &TabularMdp) -> Vec<ActionVector> {
    (0..mdp.n_states)
        .map(|s| ActionVector::new(mdp.expert_policy.probs(s).iter().map(|&p| u8::from(p >= 0.5)).collect()).unwrap())
        .collect()
}

pub fn gen_tabular_mdp(spec: &DriftMdpSpec) -> Result<TabularMdp, MdpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (on, _) = spec.halves();
    let n_actions = 1usize << spec.k;

    let modes: Vec<usize> = (0..spec.n_states).map(|_| rng.random_range(0..n_actions)).collect();
    let expert_probs = modes
        .iter()
        .map(|&m| {
            let bits = ActionVector::from_index(m, spec.k);
            bits.to_f64().iter().map(|&b| 0.5 + (b - 0.5) * spec.expert_determinism).collect()
        })
        .collect();

    let p0_row = random_row(&mut rng, 0..on, spec.branching);
    let mut p0 = vec![0.0; spec.n_states];
    for (s, p) in p0_row {
        p0[s] = p;
    }

    let mut transitions = Vec::with_capacity(spec.n_states * n_actions);
    for &mode in &modes {
        let expert_row = random_row(&mut rng, 0..on, spec.branching);
        for a in 0..n_actions {
            if a == mode || spec.drift_strength == 0.0 {
                transitions.push(expert_row.clone());
            } else {
                let detour = random_row(&mut rng, on..spec.n_states, spec.branching);
                transitions.push(mix(&expert_row, &detour, spec.drift_strength));
            }
        }
    }
    let mdp = TabularMdp {
        n_states: spec.n_states,
        k: spec.k,
        p0,
        transitions,
        expert_policy: BernoulliPolicy::new(expert_probs)?,
        horizon: spec.horizon,
    };
    mdp.validate()?;
    Ok(mdp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenCorpusSpec {
    pub vocab_size: usize,
    pub k: usize,
    pub n_dialogues: usize,
    pub turns: usize,
    pub n_topics: usize,
    /// Inclusive range of user-utterance lengths.
    pub utterance_len: (usize, usize),
    pub multi_subaction: bool,
    /// `bits_mixture[i]` is the probability of setting `i + 1` sub-actions
    /// (ignored unless `multi_subaction`).
    pub bits_mixture: Vec<f64>,
    pub seed: u64,
}

impl TokenCorpusSpec {
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.k == 0 || self.vocab_size < self.k {
            return Err(MdpError::Invalid(format!(
                "vocab_size {} must be at least k={}",
                self.vocab_size, self.k
            )));
        }
        if self.n_dialogues == 0 || self.turns == 0 || self.n_topics == 0 {
            return Err(MdpError::Invalid("n_dialogues, turns and n_topics must be positive".into()));
        }
        if self.utterance_len.0 > self.utterance_len.1 {
            return Err(MdpError::Invalid("utterance_len range is empty".into()));
        }
        if self.multi_subaction {
            let total: f64 = self.bits_mixture.iter().sum();
            if self.bits_mixture.is_empty()
                || self.bits_mixture.len() > self.k
                || self.bits_mixture.iter().any(|p| !(*p >= 0.0))
                || (total - 1.0).abs() > 1e-9
            {
                return Err(MdpError::Invalid(
                    "bits_mixture must be a distribution over 1..=k set bits".into(),
                ));
            }
        }
        Ok(())
    }

    /// Probability of exactly `c` set bits per action.
    pub fn bit_count_probability(&self, c: usize) -> f64 {
        if !self.multi_subaction {
            return f64::from(u8::from(c == 1));
        }
        if c == 0 {
            0.0
        } else {
            self.bits_mixture.get(c - 1).copied().unwrap_or(0.0)
        }
    }
}

/// Train/validation/test splits of one generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DemonstrationDataset,
    pub validation: DemonstrationDataset,
    pub test: DemonstrationDataset,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &DemonstrationDataset> {
        [&self.train, &self.validation, &self.test].into_iter()
    }
}

/// Hidden generative parameters of a token corpus.
struct TokenWorld {
    topic_stay: f64,
    /// Per-topic sub-action preference weights.
    preference: Vec<Vec<f64>>,
    /// Per-topic content-word pools.
    words: Vec<Vec<u32>>,
}

impl TokenWorld {
    fn new(spec: &TokenCorpusSpec, rng: &mut ChaCha8Rng) -> Self {
        let content: Vec<u32> = if spec.vocab_size > spec.k {
            (spec.k as u32..spec.vocab_size as u32).collect()
        } else {
            (0..spec.vocab_size as u32).collect()
        };
        let pool = (content.len() / spec.n_topics).clamp(1, 40);
        let words = (0..spec.n_topics)
            .map(|_| (0..pool).map(|_| content[rng.random_range(0..content.len())]).collect())
            .collect();
        let preference = (0..spec.n_topics)
            .map(|_| (0..spec.k).map(|_| rng.random_range(0.05..1.0f64).powi(2)).collect())
            .collect();
        Self {
            topic_stay: 0.7,
            preference,
            words,
        }
    }

    fn next_topic(&self, topic: usize, n_topics: usize, rng: &mut ChaCha8Rng) -> usize {
        if n_topics == 1 || rng.random_bool(self.topic_stay) {
            topic
        } else {
            (topic + rng.random_range(1..n_topics)) % n_topics
        }
    }

    fn user_utterance(&self, spec: &TokenCorpusSpec, topic: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let len = rng.random_range(spec.utterance_len.0..=spec.utterance_len.1);
        let words = &self.words[topic];
        (0..len)
            .map(|_| {
                // mostly on-topic, sometimes any content word
                if rng.random_bool(0.8) {
                    words[rng.random_range(0..words.len())]
                } else {
                    rng.random_range(spec.k.min(spec.vocab_size - 1) as u32..spec.vocab_size as u32)
                }
            })
            .collect()
    }

    fn action(&self, spec: &TokenCorpusSpec, topic: usize, previous: Option<&ActionVector>, rng: &mut ChaCha8Rng) -> ActionVector {
        let count = if spec.multi_subaction {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = spec.bits_mixture.len();
            for (i, p) in spec.bits_mixture.iter().enumerate() {
                acc += p;
                if u < acc {
                    c = i + 1;
                    break;
                }
            }
            c
        } else {
            1
        };
        // sub-actions just taken are less likely to repeat
        let weights: Vec<f64> = (0..spec.k)
            .map(|j| {
                let repeat = previous.is_some_and(|p| p.is_set(j));
                self.preference[topic][j] * if repeat { 0.2 } else { 1.0 }
            })
            .collect();
        let chosen = sample_weighted(rng, spec.k, |j| weights[j], count).expect("positive weights");
        let mut bits = vec![0u8; spec.k];
        for j in chosen {
            bits[j] = 1;
        }
        ActionVector::new(bits).unwrap()
    }
}

/// Agent utterance revealing each set sub-action with probability 0.9.
fn agent_utterance(action: &ActionVector, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..action.k())
        .filter(|&j| action.is_set(j) && rng.random_bool(0.9))
        .map(|j| j as u32)
        .collect()
}

fn simulate_dialogue(spec: &TokenCorpusSpec, world: &TokenWorld, rng: &mut ChaCha8Rng) -> (Vec<DialogueTurn>, Vec<u32>) {
    let mut topic = rng.random_range(0..spec.n_topics);
    let mut turns: Vec<DialogueTurn> = Vec::with_capacity(spec.turns);
    let mut previous: Option<ActionVector> = None;
    for _ in 0..spec.turns {
        let agent_tokens = previous.as_ref().map_or_else(Vec::new, |a| agent_utterance(a, rng));
        let user_tokens = world.user_utterance(spec, topic, rng);
        let action = world.action(spec, topic, previous.as_ref(), rng);
        previous = Some(action.clone());
        turns.push(DialogueTurn {
            agent_tokens,
            user_tokens,
            action,
        });
        topic = world.next_topic(topic, spec.n_topics, rng);
    }
    let closing = agent_utterance(previous.as_ref().expect("at least one turn"), rng);
    (turns, closing)
}

/// Flattens dialogue turns into transition tuples; the state at turn `t` is
/// the concatenated history of every utterance up to the user's reply.
pub fn turns_to_tuples(dialogue_id: &str, turns: &[DialogueTurn], closing_agent_tokens: &[u32]) -> Vec<TransitionTuple> {
    let mut contexts = Vec::with_capacity(turns.len() + 1);
    let mut history: Vec<u32> = Vec::new();
    for turn in turns {
        history.extend(&turn.agent_tokens);
        history.extend(&turn.user_tokens);
        contexts.push(State::Tokens(history.clone()));
    }
    history.extend(closing_agent_tokens);
    contexts.push(State::Tokens(history));
    turns
        .iter()
        .enumerate()
        .map(|(t, turn)| TransitionTuple {
            initial_state: contexts[0].clone(),
            state: contexts[t].clone(),
            action: turn.action.clone(),
            next_state: contexts[t + 1].clone(),
            done: t + 1 == turns.len(),
            dialogue_id: dialogue_id.to_string(),
            turn_index: t,
        })
        .collect()
}

/// Dialogue counts for an 8/1/1 split.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (n * 8) / 10;
    let validation = (n - train) / 2;
    (train, validation, n - train - validation)
}

pub fn gen_token_corpus(spec: &TokenCorpusSpec) -> Result<Splits, MdpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let world = TokenWorld::new(spec, &mut rng);
    let (n_train, n_val, _) = split_counts(spec.n_dialogues);
    let empty = |split| DemonstrationDataset::empty(spec.k, spec.vocab_size, Representation::Tokens, split);
    let mut splits = Splits {
        train: empty(Split::Train),
        validation: empty(Split::Validation),
        test: empty(Split::Test),
    };
    for d in 0..spec.n_dialogues {
        let (turns, closing) = simulate_dialogue(spec, &world, &mut rng);
        let target = if d < n_train {
            &mut splits.train
        } else if d < n_train + n_val {
            &mut splits.validation
        } else {
            &mut splits.test
        };
        target.tuples.extend(turns_to_tuples(&format!("d{d}"), &turns, &closing));
    }
    Ok(splits)
}

/// Expert rollouts of a tabular MDP split into train/validation/test with
/// independent seeds.
pub fn tabular_splits(mdp: &TabularMdp, counts: (usize, usize, usize), seed: u64) -> Result<Splits, MdpError> {
    let make = |n: usize, offset: u64, split: Split| -> Result<DemonstrationDataset, MdpError> {
        let mut ds = rollout_dataset(mdp, &mdp.expert_policy, n, seed.wrapping_mul(3).wrapping_add(offset))?;
        ds.split = split;
        Ok(ds)
    };
    Ok(Splits {
        train: make(counts.0, 0, Split::Train)?,
        validation: make(counts.1, 1, Split::Validation)?,
        test: make(counts.2, 2, Split::Test)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PresetSpec {
    Tabular {
        mdp: DriftMdpSpec,
        dialogues: (usize, usize, usize),
    },
    Tokens {
        corpus: TokenCorpusSpec,
    },
}

pub const PRESET_NAMES: [&str; 3] = ["drift-easy", "drift-hard", "token-soc"];

/// The named benchmark presets, with `seed` substituted.
pub fn preset(name: &str, seed: u64) -> Option<PresetSpec> {
    match name {
        "drift-easy" => Some(PresetSpec::Tabular {
            mdp: DriftMdpSpec {
                n_states: 20,
                k: 4,
                horizon: 10,
                branching: 3,
                drift_strength: 0.5,
                expert_determinism: 1.0,
                seed,
            },
            dialogues: (200, 50, 100),
        }),
        "drift-hard" => Some(PresetSpec::Tabular {
            mdp: DriftMdpSpec {
                n_states: 100,
                k: 6,
                horizon: 10,
                branching: 4,
                drift_strength: 0.8,
                expert_determinism: 0.8,
                seed,
            },
            dialogues: (200, 50, 100),
        }),
        "token-soc" => Some(PresetSpec::Tokens {
            corpus: TokenCorpusSpec {
                vocab_size: 500,
                k: 8,
                n_dialogues: 300,
                turns: 8,
                n_topics: 6,
                utterance_len: (3, 8),
                multi_subaction: true,
                bits_mixture: vec![0.5, 0.3, 0.2],
                seed,
            },
        }),
        _ => None,
    }
}

/// Generated splits plus, for tabular presets, the ground-truth MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub splits: Splits,
    pub mdp: Option<TabularMdp>,
}

pub fn generate(spec: &PresetSpec) -> Result<Generated, MdpError> {
    match spec {
        PresetSpec::Tabular { mdp, dialogues } => {
            let env = gen_tabular_mdp(mdp)?;
            let splits = tabular_splits(&env, *dialogues, mdp.seed)?;
            Ok(Generated { splits, mdp: Some(env) })
        }
        PresetSpec::Tokens { corpus } => Ok(Generated {
            splits: gen_token_corpus(corpus)?,
            mdp: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::occupancy_measure;

    fn spec(drift: f64, determinism: f64) -> DriftMdpSpec {
        DriftMdpSpec {
            n_states: 12,
            k: 3,
            horizon: 6,
            branching: 2,
            drift_strength: drift,
            expert_determinism: determinism,
            seed: 4,
        }
    }

    fn tv(a: &TransitionRow, b: &TransitionRow, n: usize) -> f64 {
        let mut diff = vec![0.0; n];
        a.iter().for_each(|&(s, p)| diff[s] += p);
        b.iter().for_each(|&(s, p)| diff[s] -= p);
        0.5 * diff.iter().map(|d| d.abs()).sum::<f64>()
    }

    #[test]
    fn no_drift_makes_actions_irrelevant() {
        let mdp = gen_tabular_mdp(&spec(0.0, 0.6)).unwrap();
        for s in 0..mdp.n_states {
            for a in 1..mdp.n_actions() {
                assert_eq!(mdp.row(s, a), mdp.row(s, 0));
            }
        }
        let uniform = BernoulliPolicy::uniform(mdp.n_states, mdp.k);
        let a = occupancy_measure(&mdp, &mdp.expert_policy, 0.9, 20).unwrap();
        let b = occupancy_measure(&mdp, &uniform, 0.9, 20).unwrap();
        for (x, y) in a.state_marginal().iter().zip(b.state_marginal()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mistakes_shift_by_the_drift_strength() {
        let mdp = gen_tabular_mdp(&spec(0.8, 1.0)).unwrap();
        let modes = expert_modes(&mdp);
        for s in 0..mdp.n_states {
            let mode = modes[s].to_index();
            for a in (0..mdp.n_actions()).filter(|&a| a != mode) {
                assert!(tv(mdp.row(s, a), mdp.row(s, mode), mdp.n_states) >= 0.8 - 1e-12);
            }
        }
    }

    #[test]
    fn full_drift_errors_leave_the_expert_support() {
        let mdp = gen_tabular_mdp(&spec(1.0, 1.0)).unwrap();
        let expert = occupancy_measure(&mdp, &mdp.expert_policy, 0.9, mdp.horizon).unwrap();
        let reachable: Vec<bool> = (0..mdp.n_states)
            .map(|s| expert.marginals.iter().any(|beta| beta[s] > 0.0))
            .collect();
        let modes = expert_modes(&mdp);
        for s in (0..mdp.n_states).filter(|&s| reachable[s]) {
            let wrong = (modes[s].to_index() + 1) % mdp.n_actions();
            for &(sp, p) in mdp.row(s, wrong) {
                assert!(p > 0.0 && !reachable[sp], "state {sp} reachable");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(gen_tabular_mdp(&spec(0.5, 0.8)).unwrap(), gen_tabular_mdp(&spec(0.5, 0.8)).unwrap());
        let mut other = spec(0.5, 0.8);
        other.seed = 5;
        assert_ne!(gen_tabular_mdp(&spec(0.5, 0.8)).unwrap(), gen_tabular_mdp(&other).unwrap());
    }

    #[test]
    fn infeasible_branching_is_a_construction_error() {
        let mut s = spec(0.5, 1.0);
        s.branching = 0;
        assert!(matches!(gen_tabular_mdp(&s), Err(MdpError::Construction(_))));
        s.branching = 7;
        assert!(matches!(gen_tabular_mdp(&s), Err(MdpError::Construction(_))));
        s.n_states = 500;
        assert!(matches!(gen_tabular_mdp(&s), Err(MdpError::Capacity(_))));
    }

    fn corpus(multi: bool) -> TokenCorpusSpec {
        TokenCorpusSpec {
            vocab_size: 60,
            k: 5,
            n_dialogues: 100,
            turns: 10,
            n_topics: 3,
            utterance_len: (2, 5),
            multi_subaction: multi,
            bits_mixture: vec![0.6, 0.3, 0.1],
            seed: 9,
        }
    }

    #[test]
    fn corpus_counts_and_splits() {
        let splits = gen_token_corpus(&corpus(true)).unwrap();
        assert_eq!(splits.train.len(), 800);
        assert_eq!(splits.validation.len(), 100);
        assert_eq!(splits.test.len(), 100);
        assert_eq!((splits.train.num_dialogues(), splits.validation.num_dialogues()), (80, 10));
        for ds in splits.iter() {
            ds.validate().unwrap();
        }
        assert_eq!(splits, gen_token_corpus(&corpus(true)).unwrap());
    }

    #[test]
    fn single_subaction_corpora_set_one_bit() {
        let splits = gen_token_corpus(&corpus(false)).unwrap();
        assert!(splits.iter().flat_map(|d| &d.tuples).all(|t| t.action.count_ones() == 1));
    }

    #[test]
    fn agent_utterances_reveal_the_previous_action() {
        let splits = gen_token_corpus(&corpus(true)).unwrap();
        let dialogue = splits.train.dialogues()[0];
        for w in dialogue.windows(2) {
            let State::Tokens(prev) = &w[0].state else { panic!() };
            let State::Tokens(next) = &w[1].state else { panic!() };
            let revealed = &next[prev.len()..];
            for &tok in revealed.iter().filter(|&&t| t < 5) {
                assert!(w[0].action.is_set(tok as usize));
            }
        }
    }

    #[test]
    fn presets_generate_valid_data() {
        for name in PRESET_NAMES {
            let g = generate(&preset(name, 1).unwrap()).unwrap();
            for ds in g.splits.iter() {
                ds.validate().unwrap();
                assert!(!ds.is_empty());
            }
            assert_eq!(g.mdp.is_some(), name != "token-soc");
        }
        assert!(preset("nope", 0).is_none());
    }
}
