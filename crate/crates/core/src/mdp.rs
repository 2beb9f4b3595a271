//! Finite-state environments with multi-sub-action Bernoulli policies and the
//! exact oracles computed on them: per-step state marginals, the discounted
//! occupancy measure, the Bellman operator, and KL divergence between tables.
//!
//! Action vectors are indexed `0..2^k` by their binary encoding
//! (see [`ActionVector::from_index`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ActionVector, DemonstrationDataset, Representation, Split, State, TransitionTuple};

pub const MAX_K: usize = 8;
pub const MAX_STATES: usize = 200;
const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid mdp: {0}")]
    Invalid(String),
    #[error("infeasible construction: {0}")]
    Construction(String),
}

/// Independent Bernoulli probability per sub-action, per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliPolicy {
    probs: Vec<Vec<f64>>,
}

impl BernoulliPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let k = probs.first().map_or(0, Vec::len);
        for (s, row) in probs.iter().enumerate() {
            if row.len() != k {
                return Err(MdpError::Shape(format!("state {s} has {} probabilities, expected {k}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(MdpError::Invalid(format!("state {s} has a probability outside [0, 1]")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, k: usize) -> Self {
        Self {
            probs: vec![vec![0.5; k]; n_states],
        }
    }

    /// Always emits `actions[s]` in state `s`.
    pub fn deterministic(actions: &[ActionVector]) -> Self {
        Self {
            probs: actions.iter().map(ActionVector::to_f64).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn k(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn probs_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.probs[s]
    }

    /// `π(a|s) = Π_j p_j^{a_j} (1 - p_j)^{1 - a_j}`.
    pub fn action_prob(&self, s: usize, action_index: usize) -> f64 {
        self.probs[s]
            .iter()
            .enumerate()
            .map(|(j, &p)| if (action_index >> j) & 1 == 1 { p } else { 1.0 - p })
            .product()
    }

    /// Row-major `n_states x 2^k` table of `π(a|s)`.
    pub fn action_table(&self) -> Vec<f64> {
        let n_actions = 1usize << self.k();
        (0..self.n_states())
            .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.action_prob(s, a))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> ActionVector {
        let bits = self.probs[s]
            .iter()
            .map(|&p| u8::from(rng.random::<f64>() < p))
            .collect();
        ActionVector::new(bits).expect("sampled bits are binary")
    }
}

/// Sparse next-state distribution.
pub type TransitionRow = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub k: usize,
    pub p0: Vec<f64>,
    /// Row `s * 2^k + a` holds `P(· | s, a)`.
    pub transitions: Vec<TransitionRow>,
    pub expert_policy: BernoulliPolicy,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn n_actions(&self) -> usize {
        1 << self.k
    }

    pub fn row(&self, s: usize, a: usize) -> &TransitionRow {
        &self.transitions[s * self.n_actions() + a]
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        check_capacity(self.n_states, self.k)?;
        if self.p0.len() != self.n_states {
            return Err(MdpError::Shape(format!("p0 has {} entries for {} states", self.p0.len(), self.n_states)));
        }
        check_distribution("p0", self.p0.iter().copied())?;
        if self.transitions.len() != self.n_states * self.n_actions() {
            return Err(MdpError::Shape(format!(
                "{} transition rows, expected {}",
                self.transitions.len(),
                self.n_states * self.n_actions()
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if let Some((s, _)) = row.iter().find(|(s, _)| *s >= self.n_states) {
                return Err(MdpError::Shape(format!("row {i} targets state {s}")));
            }
            check_distribution(&format!("transition row {i}"), row.iter().map(|(_, p)| *p))?;
        }
        if self.expert_policy.n_states() != self.n_states || self.expert_policy.k() != self.k {
            return Err(MdpError::Shape("expert policy dimensions do not match the mdp".into()));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &BernoulliPolicy) -> Result<(), MdpError> {
        if policy.n_states() != self.n_states || policy.k() != self.k {
            return Err(MdpError::Shape(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states(),
                policy.k(),
                self.n_states,
                self.k
            )));
        }
        Ok(())
    }

    /// `β_{t+1}(s') = Σ_{s,a} β_t(s) π(a|s) P(s'|s,a)`.
    pub fn step_marginal(&self, policy: &BernoulliPolicy, beta: &[f64]) -> Vec<f64> {
        let n_actions = self.n_actions();
        let mut next = vec![0.0; self.n_states];
        for (s, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                let w = b * policy.action_prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for &(sp, p) in self.row(s, a) {
                    next[sp] += w * p;
                }
            }
        }
        next
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(self.p0.iter().copied().enumerate(), rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s, a).iter().copied(), rng)
    }
}

fn sample_categorical<R: Rng + ?Sized>(items: impl Iterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn check_capacity(n_states: usize, k: usize) -> Result<(), MdpError> {
    if k > MAX_K || n_states > MAX_STATES {
        return Err(MdpError::Capacity(format!(
            "{n_states} states with k={k} exceeds the {MAX_STATES}-state, k={MAX_K} limit"
        )));
    }
    Ok(())
}

fn check_distribution(what: &str, values: impl Iterator<Item = f64>) -> Result<(), MdpError> {
    let mut total = 0.0;
    for p in values {
        if !(0.0..=1.0).contains(&p) {
            return Err(MdpError::Invalid(format!("{what} has probability {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > SUM_TOL {
        return Err(MdpError::Invalid(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Discounted state-action occupancy truncated at horizon `T`, with the
/// per-step marginals it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `n_states x n_actions`.
    pub rho: Vec<f64>,
    /// `β_0 ..= β_T`.
    pub marginals: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: usize,
}

impl Occupancy {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.rho[s * self.n_actions + a]
    }

    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// Mass that truncation leaves out, `γ^{T+1}`.
    pub fn tail_mass(&self) -> f64 {
        self.gamma.powi(self.horizon as i32 + 1)
    }

    /// `Σ_a ρ(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.rho.chunks(self.n_actions).map(|c| c.iter().sum()).collect()
    }

    pub fn expectation(&self, table: &[f64]) -> f64 {
        self.rho.iter().zip(table).map(|(r, f)| r * f).sum()
    }
}

/// `ρ(s,a) = (1-γ) Σ_{t=0..=T} γ^t β_t(s) π(a|s)` by forward dynamic programming.
pub fn occupancy_measure(
    mdp: &TabularMdp,
    policy: &BernoulliPolicy,
    gamma: f64,
    horizon: usize,
) -> Result<Occupancy, MdpError> {
    check_capacity(mdp.n_states, mdp.k)?;
    mdp.check_policy(policy)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(MdpError::Invalid(format!("discount {gamma} outside [0, 1)")));
    }
    let n_actions = mdp.n_actions();
    let pi = policy.action_table();
    let mut rho = vec![0.0; mdp.n_states * n_actions];
    let mut marginals = Vec::with_capacity(horizon + 1);
    let mut beta = mdp.p0.clone();
    let mut weight = 1.0 - gamma;
    for t in 0..=horizon {
        for (s, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for a in 0..n_actions {
                rho[s * n_actions + a] += weight * b * pi[s * n_actions + a];
            }
        }
        let next = if t < horizon { Some(mdp.step_marginal(policy, &beta)) } else { None };
        marginals.push(beta);
        match next {
            Some(n) => beta = n,
            None => break,
        }
        weight *= gamma;
    }
    Ok(Occupancy {
        n_states: mdp.n_states,
        n_actions,
        rho,
        marginals,
        gamma,
        horizon,
    })
}

/// `KL(p || q)` after renormalizing both tables to sum 1, with `0 log 0 = 0`.
/// Returns `f64::INFINITY` when `p` has mass where `q` has none.
pub fn exact_kl(p: &[f64], q: &[f64]) -> Result<f64, MdpError> {
    if p.len() != q.len() {
        return Err(MdpError::Shape(format!("tables of length {} and {}", p.len(), q.len())));
    }
    let zp: f64 = p.iter().sum();
    let zq: f64 = q.iter().sum();
    if !(zp > 0.0) {
        return Err(MdpError::Invalid("first table has no mass".into()));
    }
    if !(zq > 0.0) {
        return Ok(f64::INFINITY);
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pn = pi / zp;
        if pn == 0.0 {
            continue;
        }
        let qn = qi / zq;
        if qn == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pn * (pn / qn).ln();
    }
    Ok(kl.max(0.0))
}

/// `(B^π φ)(s, a) = γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') φ(s', a')` for a row-major
/// `n_states x 2^k` table `φ`.
pub fn bellman_backup(mdp: &TabularMdp, policy: &BernoulliPolicy, phi: &[f64], gamma: f64) -> Vec<f64> {
    let n_actions = mdp.n_actions();
    let pi = policy.action_table();
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| (0..n_actions).map(|a| pi[s * n_actions + a] * phi[s * n_actions + a]).sum())
        .collect();
    (0..mdp.n_states * n_actions)
        .map(|i| {
            let (s, a) = (i / n_actions, i % n_actions);
            gamma * mdp.row(s, a).iter().map(|&(sp, p)| p * v[sp]).sum::<f64>()
        })
        .collect()
}

/// `E_{s0 ~ p0, a0 ~ π} φ(s0, a0)`.
pub fn initial_expectation(mdp: &TabularMdp, policy: &BernoulliPolicy, phi: &[f64]) -> f64 {
    let n_actions = mdp.n_actions();
    mdp.p0
        .iter()
        .enumerate()
        .map(|(s, &p)| {
            p * (0..n_actions)
                .map(|a| policy.action_prob(s, a) * phi[s * n_actions + a])
                .sum::<f64>()
        })
        .sum()
}

/// Samples `n_dialogues` trajectories of length `mdp.horizon` and emits one
/// transition per turn. Deterministic in `seed`.
pub fn rollout_dataset(
    mdp: &TabularMdp,
    policy: &BernoulliPolicy,
    n_dialogues: usize,
    seed: u64,
) -> Result<DemonstrationDataset, MdpError> {
    mdp.check_policy(policy)?;
    if n_dialogues == 0 {
        return Err(MdpError::Invalid("n_dialogues must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = DemonstrationDataset::empty(mdp.k, mdp.n_states, Representation::Tabular, Split::Train);
    for d in 0..n_dialogues {
        let s0 = mdp.sample_initial(&mut rng);
        let mut s = s0;
        for t in 0..mdp.horizon {
            let action = policy.sample(s, &mut rng);
            let next = mdp.sample_next(s, action.to_index(), &mut rng);
            ds.tuples.push(TransitionTuple {
                initial_state: State::Tabular(s0),
                state: State::Tabular(s),
                action,
                next_state: State::Tabular(next),
                done: t + 1 == mdp.horizon,
                dialogue_id: format!("d{d}"),
                turn_index: t,
            });
            s = next;
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two states, k = 1; action 1 moves to the other state with prob 0.8.
    fn chain() -> TabularMdp {
        TabularMdp {
            n_states: 2,
            k: 1,
            p0: vec![0.7, 0.3],
            transitions: vec![
                vec![(0, 0.9), (1, 0.1)],
                vec![(0, 0.2), (1, 0.8)],
                vec![(1, 0.6), (0, 0.4)],
                vec![(0, 0.8), (1, 0.2)],
            ],
            expert_policy: BernoulliPolicy::new(vec![vec![1.0], vec![0.0]]).unwrap(),
            horizon: 5,
        }
    }

    #[test]
    fn gamma_zero_deterministic_policy_is_a_point_mass() {
        let mut mdp = chain();
        mdp.p0 = vec![1.0, 0.0];
        let occ = occupancy_measure(&mdp, &mdp.expert_policy, 0.0, 10).unwrap();
        assert_eq!(occ.get(0, 1), 1.0);
        assert_eq!(occ.total_mass(), 1.0);
        assert_eq!(occ.rho.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn matches_term_by_term_summation() {
        // Independent oracle: enumerate the joint state-action distribution at each
        // step with explicit matrices and add γ^t-weighted terms one by one.
        let mdp = chain();
        let policy = BernoulliPolicy::uniform(2, 1);
        let (gamma, horizon) = (0.5, 50);
        let occ = occupancy_measure(&mdp, &policy, gamma, horizon).unwrap();

        let mut p_state = [0.7, 0.3];
        let mut expected = [0.0; 4];
        for t in 0..=horizon {
            let mut joint = [0.0; 4];
            for s in 0..2 {
                for a in 0..2 {
                    joint[s * 2 + a] = p_state[s] * 0.5;
                }
            }
            for i in 0..4 {
                expected[i] += (1.0 - gamma) * gamma.powi(t as i32) * joint[i];
            }
            let mut next = [0.0; 2];
            for i in 0..4 {
                for &(sp, p) in &mdp.transitions[i] {
                    next[sp] += joint[i] * p;
                }
            }
            p_state = next;
        }
        for i in 0..4 {
            assert!((occ.rho[i] - expected[i]).abs() < 1e-9, "cell {i}");
        }
        assert!((occ.total_mass() - (1.0 - gamma.powi(51))).abs() < 1e-9);
    }

    #[test]
    fn dimension_and_capacity_errors() {
        let mdp = chain();
        let wrong = BernoulliPolicy::uniform(3, 1);
        assert!(matches!(occupancy_measure(&mdp, &wrong, 0.9, 5), Err(MdpError::Shape(_))));
        let mut big = chain();
        big.k = 9;
        assert!(matches!(
            occupancy_measure(&big, &BernoulliPolicy::uniform(2, 9), 0.9, 5),
            Err(MdpError::Capacity(_))
        ));
    }

    #[test]
    fn kl_cases() {
        assert_eq!(exact_kl(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let expected = 0.3 * 0.6f64.ln() + 0.7 * 1.4f64.ln();
        assert!((exact_kl(&[0.3, 0.7], &[0.5, 0.5]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.0823).abs() < 1e-4);
        assert_eq!(exact_kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        // unnormalized tables are renormalized first
        assert!((exact_kl(&[3.0, 7.0], &[2.0, 2.0]).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(exact_kl(&[1.0], &[0.5, 0.5]), Err(MdpError::Shape(_))));
    }

    #[test]
    fn rollout_counts_and_determinism() {
        let mdp = chain();
        let ds = rollout_dataset(&mdp, &BernoulliPolicy::uniform(2, 1), 10, 3).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.tuples.iter().filter(|t| t.done).count(), 10);
        ds.validate().unwrap();
        let again = rollout_dataset(&mdp, &BernoulliPolicy::uniform(2, 1), 10, 3).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        ds.write_jsonl(&mut a).unwrap();
        again.write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_action_frequencies_match_policy() {
        let mut mdp = chain();
        mdp.horizon = 10;
        let policy = BernoulliPolicy::new(vec![vec![0.3], vec![0.75]]).unwrap();
        let ds = rollout_dataset(&mdp, &policy, 1000, 17).unwrap();
        for s in 0..2 {
            let turns: Vec<_> = ds.tuples.iter().filter(|t| t.state == State::Tabular(s)).collect();
            let n = turns.len() as f64;
            let hits = turns.iter().filter(|t| t.action.is_set(0)).count() as f64;
            let p = policy.probs(s)[0];
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!((hits / n - p).abs() < 3.0 * sigma, "state {s}: {} vs {p}", hits / n);
        }
    }

    #[test]
    fn monte_carlo_rollouts_agree_with_occupancy() {
        let mdp = chain();
        let policy = BernoulliPolicy::new(vec![vec![0.4], vec![0.65]]).unwrap();
        let (gamma, horizon) = (0.8, 30);
        let occ = occupancy_measure(&mdp, &policy, gamma, horizon).unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sum = [0.0; 4];
        let mut sum_sq = [0.0; 4];
        for _ in 0..n {
            let mut sample = [0.0; 4];
            let mut s = mdp.sample_initial(&mut rng);
            let mut w = 1.0 - gamma;
            for _ in 0..=horizon {
                let a = policy.sample(s, &mut rng).to_index();
                sample[s * 2 + a] += w;
                s = mdp.sample_next(s, a, &mut rng);
                w *= gamma;
            }
            for i in 0..4 {
                sum[i] += sample[i];
                sum_sq[i] += sample[i] * sample[i];
            }
        }
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - occ.rho[i]).abs() < 3.0 * se, "cell {i}: {mean} vs {}", occ.rho[i]);
        }
    }

    #[test]
    fn validate_rejects_bad_rows() {
        let mut mdp = chain();
        mdp.validate().unwrap();
        mdp.transitions[1] = vec![(0, 0.5)];
        assert!(matches!(mdp.validate(), Err(MdpError::Invalid(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_mdp(n: usize, k: usize, seed: u64) -> TabularMdp {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut norm = |len: usize| {
                let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / z).collect::<Vec<_>>()
            };
            let p0 = norm(n);
            let transitions = (0..n << k).map(|_| norm(n).into_iter().enumerate().collect()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let expert = BernoulliPolicy::new((0..n).map(|_| (0..k).map(|_| rng.random()).collect()).collect()).unwrap();
            TabularMdp { n_states: n, k, p0, transitions, expert_policy: expert, horizon: 5 }
        }

        proptest! {
            #[test]
            fn occupancy_is_normalized_and_marginals_consistent(
                n in 1usize..6, k in 1usize..4, seed in 0u64..1000,
                gamma in 0.0f64..0.99, horizon in 0usize..40,
            ) {
                let mdp = random_mdp(n, k, seed);
                let occ = occupancy_measure(&mdp, &mdp.expert_policy, gamma, horizon).unwrap();
                prop_assert!((occ.total_mass() - (1.0 - gamma.powi(horizon as i32 + 1))).abs() < 1e-9);
                for t in 0..horizon {
                    let stepped = mdp.step_marginal(&mdp.expert_policy, &occ.marginals[t]);
                    for (x, y) in stepped.iter().zip(&occ.marginals[t + 1]) {
                        prop_assert_eq!(x, y);
                    }
                }
            }

            #[test]
            fn kl_is_nonnegative_and_zero_only_on_equal_tables(
                p in proptest::collection::vec(0.01f64..1.0, 2..12),
                scale in 0.1f64..10.0,
                bump in 0usize..12,
            ) {
                let q: Vec<f64> = p.iter().map(|v| v * scale).collect();
                prop_assert!(exact_kl(&p, &q).unwrap().abs() < 1e-12);
                let mut r = p.clone();
                let i = bump % r.len();
                r[i] *= 1.5;
                prop_assert!(exact_kl(&p, &r).unwrap() > 0.0);
                prop_assert!(exact_kl(&r, &p).unwrap() > 0.0);
            }
        }
    }
}
