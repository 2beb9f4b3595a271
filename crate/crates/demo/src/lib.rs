//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function returns a JSON string; the page parses it and draws
//! on a canvas. The same functions are plain Rust and are tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sdoil::mdp::{exact_kl, occupancy_measure, BernoulliPolicy};
use sdoil::nets::NetConfig;
use sdoil::objectives::dv_kl_testbed;
use sdoil::synthetic::{generate, preset, PresetSpec};
use sdoil::trainer::{train, TrainConfig, TrainMode};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| error_json(&e.to_string()))
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[derive(Serialize)]
struct Heatmap {
    n_states: usize,
    horizon: usize,
    /// `marginals[t][s]`: probability of being in `s` at step `t`.
    marginals: Vec<Vec<f64>>,
    expert_marginals: Vec<Vec<f64>>,
    /// `KL(ρ_expert || ρ_learner)`; the reverse direction is infinite for
    /// any noise because the expert is deterministic.
    expert_kl: f64,
}

/// Per-step state marginals on drift-easy for a policy that follows the
/// expert with probability `1 - noise` per sub-action bit and flips it
/// otherwise, alongside the expert's own marginals.
pub fn occupancy_heatmap_json(seed: u64, noise: f64) -> String {
    let noise = noise.clamp(0.0, 1.0);
    let Some(spec) = preset("drift-easy", seed) else {
        return error_json("unknown preset");
    };
    let mdp = match generate(&spec) {
        Ok(g) => g.mdp.expect("tabular preset"),
        Err(e) => return error_json(&e.to_string()),
    };
    let probs = (0..mdp.n_states)
        .map(|s| {
            mdp.expert_policy
                .probs(s)
                .iter()
                .map(|p| p * (1.0 - noise) + (1.0 - p) * noise)
                .collect()
        })
        .collect();
    let result = (|| {
        let policy = BernoulliPolicy::new(probs)?;
        let gamma = 0.9;
        let horizon = mdp.horizon - 1;
        let learner = occupancy_measure(&mdp, &policy, gamma, horizon)?;
        let expert = occupancy_measure(&mdp, &mdp.expert_policy, gamma, horizon)?;
        Ok::<_, sdoil::mdp::MdpError>(Heatmap {
            n_states: mdp.n_states,
            horizon: mdp.horizon,
            expert_kl: exact_kl(&expert.rho, &learner.rho)?,
            marginals: learner.marginals,
            expert_marginals: expert.marginals,
        })
    })();
    match result {
        Ok(h) => to_json(&h),
        Err(e) => error_json(&e.to_string()),
    }
}

#[derive(Serialize)]
struct DvCurve {
    steps: Vec<usize>,
    estimates: Vec<f64>,
    exact: f64,
}

/// Donsker-Varadhan estimates of `KL(p || q)` after increasing numbers of
/// gradient-ascent steps, next to the exact value. Weights are normalized.
pub fn dv_curve_json(p: &[f64], q: &[f64], max_steps: usize) -> String {
    let exact = match exact_kl(p, q) {
        Ok(v) => v,
        Err(e) => return error_json(&e.to_string()),
    };
    let mut steps = vec![0];
    let mut s = 1;
    while s <= max_steps.max(1) {
        steps.push(s);
        s *= 2;
    }
    let mut estimates = Vec::with_capacity(steps.len());
    for &n in &steps {
        match dv_kl_testbed(p, q, n, 1.0) {
            Ok(dv) => estimates.push(dv.estimate),
            Err(e) => return error_json(&e.to_string()),
        }
    }
    to_json(&DvCurve { steps, estimates, exact })
}

#[derive(Serialize)]
struct Curve {
    iterations: Vec<usize>,
    val_nlp: Vec<f64>,
    val_acc: Vec<f64>,
}

#[derive(Serialize)]
struct Curves {
    sd: Curve,
    sl: Curve,
}

/// Validation curves of SD and the SL baseline on a reduced drift-easy
/// corpus with matched settings.
pub fn training_curves_json(seed: u64, iterations: usize, lambda: f64) -> String {
    let Some(mut spec) = preset("drift-easy", seed) else {
        return error_json("unknown preset");
    };
    if let PresetSpec::Tabular { dialogues, .. } = &mut spec {
        *dialogues = (60, 20, 20);
    }
    let splits = match generate(&spec) {
        Ok(g) => g.splits,
        Err(e) => return error_json(&e.to_string()),
    };
    let mut net = NetConfig::for_dataset(&splits.train);
    net.hidden = 32;
    net.policy_encoder.output_dim = 16;
    net.value_encoder.output_dim = 16;
    let iterations = iterations.clamp(10, 5000);
    let run = |mode| {
        let mut cfg = TrainConfig {
            seed,
            mode,
            max_iterations: iterations,
            eval_every: (iterations / 20).max(1),
            ..TrainConfig::default()
        };
        cfg.objective.lambda = lambda.max(0.0);
        train(&splits.train, Some(&splits.validation), &net, &cfg).map(|out| Curve {
            iterations: out.log.records.iter().map(|r| r.iteration).collect(),
            val_nlp: out.log.records.iter().map(|r| r.val_nlp).collect(),
            val_acc: out.log.records.iter().map(|r| r.val_acc).collect(),
        })
    };
    match (run(TrainMode::Sd), run(TrainMode::SlBaseline)) {
        (Ok(sd), Ok(sl)) => to_json(&Curves { sd, sl }),
        (Err(e), _) | (_, Err(e)) => error_json(&e.to_string()),
    }
}

#[wasm_bindgen]
pub fn occupancy_heatmap(seed: u32, noise: f64) -> String {
    occupancy_heatmap_json(u64::from(seed), noise)
}

#[wasm_bindgen]
pub fn dv_curve(p: Vec<f64>, q: Vec<f64>, max_steps: u32) -> String {
    dv_curve_json(&p, &q, max_steps as usize)
}

#[wasm_bindgen]
pub fn training_curves(seed: u32, iterations: u32, lambda: f64) -> String {
    training_curves_json(u64::from(seed), iterations as usize, lambda)
}
