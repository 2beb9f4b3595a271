use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdoil::mdp::{bellman_backup, initial_expectation, occupancy_measure, BernoulliPolicy, TabularMdp};

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn random_mdp(seed: u64, n_states: usize, k: usize) -> (TabularMdp, BernoulliPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_actions = 1 << k;
    let transitions = (0..n_states * n_actions)
        .map(|_| random_simplex(&mut rng, n_states).into_iter().enumerate().collect())
        .collect();
    let probs = |rng: &mut ChaCha8Rng| (0..n_states).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
    let expert = BernoulliPolicy::new(probs(&mut rng)).unwrap();
    let policy = BernoulliPolicy::new(probs(&mut rng)).unwrap();
    let mdp = TabularMdp {
        n_states,
        k,
        p0: random_simplex(&mut rng, n_states),
        transitions,
        expert_policy: expert,
        horizon: 10,
    };
    mdp.validate().unwrap();
    (mdp, policy)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // E_ρ[φ - Bφ] / (1-γ) telescopes to E_{p0,π}[φ] up to the truncated tail.
    #[test]
    fn telescoping_identity(seed in any::<u64>(), n_states in 2usize..8, k in 1usize..4, scale in 0.1f64..10.0) {
        let (gamma, horizon) = (0.9, 200);
        let (mdp, policy) = random_mdp(seed, n_states, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let phi: Vec<f64> = (0..n_states << k).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let occ = occupancy_measure(&mdp, &policy, gamma, horizon).unwrap();
        let backup = bellman_backup(&mdp, &policy, &phi, gamma);
        let residual: Vec<f64> = phi.iter().zip(&backup).map(|(f, b)| f - b).collect();
        let lhs = occ.expectation(&residual) / (1.0 - gamma);
        let rhs = initial_expectation(&mdp, &policy, &phi);
        let max_phi = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-6 + gamma.powi(horizon as i32 + 1) * max_phi;
        prop_assert!((lhs - rhs).abs() <= tol, "lhs {} rhs {} tol {}", lhs, rhs, tol);
    }
}

#[test]
fn bellman_backup_matches_monte_carlo() {
    let (mdp, policy) = random_mdp(5, 4, 2);
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let phi: Vec<f64> = (0..mdp.n_states * mdp.n_actions()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let exact = bellman_backup(&mdp, &policy, &phi, gamma);
    let n = 20_000;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions() {
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let next = mdp.sample_next(s, a, &mut rng);
                    let a2 = policy.sample(next, &mut rng).to_index();
                    gamma * phi[next * mdp.n_actions() + a2]
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let target = exact[s * mdp.n_actions() + a];
            assert!((mean - target).abs() < 4.0 * se, "({s},{a}): mc {mean} exact {target} se {se}");
        }
    }
}
