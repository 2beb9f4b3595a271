//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments win,
//! so a file followed by `--set` overrides behaves as expected. Rendering the
//! resolved settings produces a valid config file, which is how every output
//! records the exact configuration that produced it.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `mode` | `sd` | `sd` or `sl-baseline` |
//! | `seed` | `0` | run seed (first seed of a sweep) |
//! | `max_iterations` | `5000` | optimizer steps |
//! | `batch_size` | `64` | transitions per step |
//! | `base_rate` | `0.001` | base learning rate |
//! | `rate_mult_pi`, `rate_mult_phi` | `1`, `0.1` | policy / value rate multipliers |
//! | `warmup_fraction` | `0.1` | share of steps spent warming up |
//! | `eval_every` | `250` | validation interval |
//! | `l2_weight`, `l2_scope` | `0`, `head-only` | optional weight decay |
//! | `gamma`, `lambda` | `0.9`, `1` | discount and supervised weight |
//! | `sampling_mode` | `cancel-sampling` | or `gumbel-sample` |
//! | `temperature` | `1` | relaxation temperature |
//! | `saddle_direction` | `paper` | or `reversed` |
//! | `terminal_mask` | `true` | drop bootstrap term on final turns |
//! | `hidden`, `embed_dim`, `encoder_output_dim`, `max_state_tokens` | `auto` | network sizes |
//! | `shared_encoder` | `false` | one encoder for both networks |
//! | `n_seeds`, `workers` | `5`, `1` | sweep repetitions and threads |

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use sdoil::dataset::DemonstrationDataset;
use sdoil::nets::NetConfig;
use sdoil::trainer::TrainConfig;

pub const DEFAULT_MAX_ITERATIONS: usize = 5000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
}

/// Network size overrides; `None` keeps the dataset-derived default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetOverrides {
    pub hidden: Option<usize>,
    pub embed_dim: Option<usize>,
    pub encoder_output_dim: Option<usize>,
    pub max_state_tokens: Option<usize>,
    pub shared_encoder: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub net: NetOverrides,
    pub n_seeds: usize,
    pub workers: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                max_iterations: DEFAULT_MAX_ITERATIONS,
                ..TrainConfig::default()
            },
            net: NetOverrides::default(),
            n_seeds: 5,
            workers: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

/// Kebab-case enum names go through serde so they match the JSON spelling.
fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(value.into())).map_err(|e| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enum did not serialize to a string: {other:?}"),
    }
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |v| v.to_string())
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "mode" => t.mode = parse_enum(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "max_iterations" => t.max_iterations = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "base_rate" => t.base_rate = parse_num(key, value)?,
            "rate_mult_pi" => t.rate_mult_pi = parse_num(key, value)?,
            "rate_mult_phi" => t.rate_mult_phi = parse_num(key, value)?,
            "warmup_fraction" => t.warmup_fraction = parse_num(key, value)?,
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "l2_weight" => t.l2_weight = parse_num(key, value)?,
            "l2_scope" => t.l2_scope = parse_enum(key, value)?,
            "gamma" => t.objective.gamma = parse_num(key, value)?,
            "lambda" => t.objective.lambda = parse_num(key, value)?,
            "sampling_mode" => t.objective.sampling_mode = parse_enum(key, value)?,
            "temperature" => t.objective.temperature = parse_num(key, value)?,
            "saddle_direction" => t.objective.saddle_direction = parse_enum(key, value)?,
            "terminal_mask" => t.objective.terminal_mask = parse_num(key, value)?,
            "hidden" => self.net.hidden = parse_auto(key, value)?,
            "embed_dim" => self.net.embed_dim = parse_auto(key, value)?,
            "encoder_output_dim" => self.net.encoder_output_dim = parse_auto(key, value)?,
            "max_state_tokens" => self.net.max_state_tokens = parse_auto(key, value)?,
            "shared_encoder" => self.net.shared_encoder = parse_num(key, value)?,
            "n_seeds" => self.n_seeds = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies a `key=value` assignment as given to `--set`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = split_assignment(assignment).ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.into(),
        })?;
        self.set(key, value)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_assignment(line).ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let o = &t.objective;
        vec![
            ("mode", enum_name(&t.mode)),
            ("seed", t.seed.to_string()),
            ("max_iterations", t.max_iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("base_rate", t.base_rate.to_string()),
            ("rate_mult_pi", t.rate_mult_pi.to_string()),
            ("rate_mult_phi", t.rate_mult_phi.to_string()),
            ("warmup_fraction", t.warmup_fraction.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("l2_weight", t.l2_weight.to_string()),
            ("l2_scope", enum_name(&t.l2_scope)),
            ("gamma", o.gamma.to_string()),
            ("lambda", o.lambda.to_string()),
            ("sampling_mode", enum_name(&o.sampling_mode)),
            ("temperature", o.temperature.to_string()),
            ("saddle_direction", enum_name(&o.saddle_direction)),
            ("terminal_mask", o.terminal_mask.to_string()),
            ("hidden", auto(self.net.hidden)),
            ("embed_dim", auto(self.net.embed_dim)),
            ("encoder_output_dim", auto(self.net.encoder_output_dim)),
            ("max_state_tokens", auto(self.net.max_state_tokens)),
            ("shared_encoder", self.net.shared_encoder.to_string()),
            ("n_seeds", self.n_seeds.to_string()),
            ("workers", self.workers.to_string()),
        ]
    }

    /// The resolved settings as config-file text, each line prefixed by `prefix`.
    pub fn render(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{prefix}{k} = {v}");
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }

    pub fn net_config(&self, dataset: &DemonstrationDataset) -> NetConfig {
        let mut net = NetConfig::for_dataset(dataset);
        let o = &self.net;
        if let Some(h) = o.hidden {
            net.hidden = h;
        }
        for spec in [&mut net.policy_encoder, &mut net.value_encoder] {
            if let Some(e) = o.embed_dim {
                spec.embed_dim = e;
            }
            if let Some(d) = o.encoder_output_dim {
                spec.output_dim = d;
            }
        }
        if let Some(m) = o.max_state_tokens {
            net.max_state_tokens = m;
        }
        net.shared_encoder = o.shared_encoder;
        net
    }
}

fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdoil::objectives::SamplingMode;
    use sdoil::trainer::TrainMode;

    #[test]
    fn render_parses_back_to_the_same_settings() {
        let mut s = Settings::default();
        s.apply_text("# comment\nmode = sl-baseline\nlambda=0.01\n\nsampling_mode = gumbel-sample\nhidden = 16\n")
            .unwrap();
        assert_eq!(s.train.mode, TrainMode::SlBaseline);
        assert_eq!(s.train.objective.sampling_mode, SamplingMode::GumbelSample);
        assert_eq!(s.net.hidden, Some(16));
        let mut back = Settings::default();
        back.apply_text(&s.render("")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn errors_name_the_problem() {
        let mut s = Settings::default();
        assert!(matches!(s.set("lamda", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(s.set("mode", "fast"), Err(ConfigError::Value { .. })));
        assert!(matches!(s.set("seed", "-1"), Err(ConfigError::Value { .. })));
        assert!(matches!(s.apply_text("a b"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(s.set_assignment("gamma=0.5").is_ok());
        assert_eq!(s.train.objective.gamma, 0.5);
    }
}
