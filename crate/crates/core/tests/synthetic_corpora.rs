use sdoil::dataset::{load_dataset, DatasetSchema};
use sdoil::evalkit::half_dialogue_accuracy;
use sdoil::mdp::{occupancy_measure, rollout_dataset};
use sdoil::synthetic::{gen_token_corpus, generate, preset, PresetSpec, TokenCorpusSpec};

fn token_spec(multi: bool) -> TokenCorpusSpec {
    match preset("token-soc", 4).unwrap() {
        PresetSpec::Tokens { mut corpus } => {
            corpus.multi_subaction = multi;
            corpus.n_dialogues = 400;
            corpus
        }
        _ => unreachable!(),
    }
}

#[test]
fn bit_count_histogram_matches_mixture() {
    for multi in [true, false] {
        let spec = token_spec(multi);
        let splits = gen_token_corpus(&spec).unwrap();
        let actions: Vec<_> = splits.iter().flat_map(|d| d.tuples.iter().map(|t| t.action.count_ones())).collect();
        let n = actions.len() as f64;
        for c in 0..=spec.k {
            let p = spec.bit_count_probability(c);
            let observed = actions.iter().filter(|&&x| x == c).count() as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (observed - p).abs() <= 3.0 * sigma + 1e-12,
                "multi={multi} count {c}: observed {observed}, expected {p}"
            );
        }
    }
}

#[test]
fn corpora_are_deterministic_and_valid() {
    for name in ["drift-easy", "drift-hard", "token-soc"] {
        let a = generate(&preset(name, 9).unwrap()).unwrap();
        let b = generate(&preset(name, 9).unwrap()).unwrap();
        assert_eq!(a.splits, b.splits, "{name}");
        for ds in a.splits.iter() {
            ds.validate().unwrap();
        }
        assert_ne!(a.splits, generate(&preset(name, 10).unwrap()).unwrap().splits, "{name}");
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let generated = generate(&preset("drift-easy", 2).unwrap()).unwrap();
    for ds in generated.splits.iter() {
        let path = dir.path().join(format!("{}.jsonl", ds.split.file_stem()));
        ds.save(&path).unwrap();
        let schema = DatasetSchema {
            k: ds.k,
            vocab_size: ds.vocab_size,
        };
        assert_eq!(&load_dataset(&path, Some(schema)).unwrap(), ds);
    }
}

#[test]
fn expert_replay_has_no_half_dialogue_gap() {
    let generated = generate(&preset("drift-easy", 1).unwrap()).unwrap();
    let mdp = generated.mdp.unwrap();
    // Replaying the expert's own probabilities: any gap between halves is
    // sampling noise only.
    let deltas: Vec<f64> = (0..20)
        .map(|seed| {
            let ds = rollout_dataset(&mdp, &mdp.expert_policy, 50, 1000 + seed).unwrap();
            let preds: Vec<Vec<f64>> = ds
                .tuples
                .iter()
                .map(|t| mdp.expert_policy.probs(t.state.tabular_id().unwrap()).to_vec())
                .collect();
            half_dialogue_accuracy(&ds, &preds, 0.5).unwrap().delta
        })
        .collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let sd = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64).sqrt();
    let se = sd / (deltas.len() as f64).sqrt();
    assert!(mean.abs() <= 3.0 * se + 1e-12, "mean {mean} se {se}");
}

#[test]
fn drift_presets_have_the_expected_shape() {
    for (name, n_states, k) in [("drift-easy", 20, 4), ("drift-hard", 100, 6)] {
        let generated = generate(&preset(name, 0).unwrap()).unwrap();
        let mdp = generated.mdp.unwrap();
        assert_eq!((mdp.n_states, mdp.k, mdp.horizon), (n_states, k, 10));
        let occ = occupancy_measure(&mdp, &mdp.expert_policy, 0.9, mdp.horizon - 1).unwrap();
        assert!((occ.total_mass() - (1.0 - occ.tail_mass())).abs() < 1e-9);
    }
}
