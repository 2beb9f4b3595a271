//! Subcommand implementations.
//!
//! Outputs are written as `<name>.partial` and renamed once complete, so an
//! interrupted or failed command never leaves a file that looks finished. A
//! runtime fault also drops a `FAILED` file with the diagnostic into the
//! output directory. Timestamps go only to `provenance.json`; every other
//! artifact is a pure function of its inputs and embedded configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use sdoil::dataset::{load_dataset, DemonstrationDataset, Split};
use sdoil::evalkit::{evaluate_model, run_protocol, Evaluation, Protocol, SweepConfig};
use sdoil::nets::Checkpoint;
use sdoil::synthetic::{generate, preset, Splits, PRESET_NAMES};
use sdoil::trainer::train;

use crate::config::Settings;
use crate::{CliError, Command, ConfigArgs};

type Result<T> = std::result::Result<T, CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn execute(command: &Command, argv: &[OsString]) -> Result<()> {
    match command {
        Command::Generate { preset, seed, out } => with_outdir(out, argv, |out| cmd_generate(preset, *seed, out)),
        Command::Train {
            data,
            out,
            mode,
            seed,
            config,
        } => {
            let mut settings = resolve(config)?;
            if let Some(mode) = mode {
                settings.set("mode", mode)?;
            }
            if let Some(seed) = seed {
                settings.train.seed = *seed;
            }
            require_dir(data)?;
            with_outdir(out, argv, |out| cmd_train(data, out, &settings))
        }
        Command::Eval { data, checkpoint, out } => {
            require_dir(data)?;
            if !checkpoint.is_file() {
                return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
            }
            with_outdir(out, argv, |out| cmd_eval(data, checkpoint, out))
        }
        Command::Sweep {
            data,
            protocol,
            out,
            n_seeds,
            workers,
            config,
        } => {
            let protocol: Protocol = protocol.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            let mut settings = resolve(config)?;
            if let Some(n) = n_seeds {
                settings.n_seeds = *n;
            }
            if let Some(w) = workers {
                settings.workers = *w;
            }
            require_dir(data)?;
            with_outdir(out, argv, |out| cmd_sweep(data, protocol, out, &settings))
        }
        Command::Report { out, inputs } => {
            for input in inputs {
                if !input.is_file() {
                    return Err(CliError::Usage(format!("input {} does not exist", input.display())));
                }
            }
            cmd_report(inputs, out)?;
            write_provenance(&sidecar_path(out), argv)
        }
    }
}

/// Defaults, then the config file, then `--set` overrides.
fn resolve(args: &ConfigArgs) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        settings.apply_text(&text)?;
    }
    for assignment in &args.set {
        settings.set_assignment(assignment)?;
    }
    Ok(settings)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("data directory {} does not exist", path.display())))
    }
}

fn with_outdir(out: &Path, argv: &[OsString], body: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    let failed = out.join("FAILED");
    let _ = fs::remove_file(&failed);
    match body(out) {
        Ok(()) => write_provenance(&out.join("provenance.json"), argv),
        Err(e) => {
            if let CliError::Runtime(msg) = &e {
                let _ = fs::write(&failed, format!("{msg}\n"));
            }
            Err(e)
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".provenance.json");
    out.with_file_name(name)
}

fn write_provenance(path: &Path, argv: &[OsString]) -> Result<()> {
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let record = json!({
        "argv": argv.iter().map(|a| a.to_string_lossy()).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": unix_time,
    });
    write_output(path, serde_json::to_string_pretty(&record).map_err(runtime)?.as_bytes())
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    fs::write(&partial, bytes).map_err(|e| runtime(format!("writing {}: {e}", partial.display())))?;
    fs::rename(&partial, path).map_err(|e| runtime(format!("renaming {}: {e}", partial.display())))
}

fn load_split(data: &Path, split: Split) -> Result<DemonstrationDataset> {
    let path = data.join(format!("{}.jsonl", split.file_stem()));
    if !path.is_file() {
        return Err(CliError::Usage(format!("missing {}", path.display())));
    }
    load_dataset(&path, None).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_generate(name: &str, seed: u64, out: &Path) -> Result<()> {
    let spec = preset(name, seed).ok_or_else(|| {
        CliError::Usage(format!("unknown preset {name:?}; expected one of {}", PRESET_NAMES.join(", ")))
    })?;
    let generated = generate(&spec).map_err(runtime)?;
    for ds in generated.splits.iter() {
        let mut bytes = Vec::new();
        ds.write_jsonl(&mut bytes).map_err(runtime)?;
        write_output(&out.join(format!("{}.jsonl", ds.split.file_stem())), &bytes)?;
    }
    if let Some(mdp) = &generated.mdp {
        write_output(&out.join("mdp.json"), &serde_json::to_vec(mdp).map_err(runtime)?)?;
    }
    let manifest = json!({ "preset": name, "seed": seed, "spec": spec });
    write_output(&out.join("spec.json"), serde_json::to_string_pretty(&manifest).map_err(runtime)?.as_bytes())
}

fn cmd_train(data: &Path, out: &Path, settings: &Settings) -> Result<()> {
    let train_set = load_split(data, Split::Train)?;
    let validation = load_split(data, Split::Validation).ok();
    let net = settings.net_config(&train_set);
    let outcome = train(&train_set, validation.as_ref(), &net, &settings.train).map_err(runtime)?;
    let metadata = json!({
        "config": settings.to_json(),
        "best_iteration": outcome.best.iteration,
        "best_val_nlp": outcome.best.val_nlp,
        "diverged": outcome.log.diverged,
    });
    let checkpoint = Checkpoint::new(&outcome.nets, &outcome.store, metadata);
    write_output(&out.join("checkpoint.json"), &serde_json::to_vec(&checkpoint).map_err(runtime)?)?;

    let mut csv = settings.render("# ").into_bytes();
    outcome.log.write_csv(&mut csv).map_err(runtime)?;
    write_output(&out.join("train_log.csv"), &csv)?;
    if outcome.log.diverged {
        return Err(runtime("training diverged; the checkpoint holds the best parameters seen before divergence"));
    }
    Ok(())
}

/// Recovers the settings embedded in a checkpoint.
fn checkpoint_settings(checkpoint: &Checkpoint) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(config) = checkpoint.metadata.get("config").and_then(|c| c.as_object()) {
        for (k, v) in config {
            let v = v.as_str().ok_or_else(|| runtime(format!("checkpoint config {k} is not a string")))?;
            settings.set(k, v).map_err(runtime)?;
        }
    }
    Ok(settings)
}

fn metrics_csv(settings: &Settings, eval: &Evaluation) -> String {
    let m = &eval.metrics;
    let h = &eval.halves;
    let mut csv = settings.render("# ");
    csv.push_str("scope,metric,value\n");
    let rows = [
        ("overall", "accuracy", m.accuracy),
        ("overall", "auc", m.auc),
        ("overall", "aps", m.aps),
        ("overall", "neg_log_prob", m.neg_log_prob),
        ("overall", "threshold", m.threshold),
        ("overall", "n_turns", m.n_turns as f64),
        ("half-dialogue", "first_half_accuracy", h.first_half),
        ("half-dialogue", "second_half_accuracy", h.second_half),
        ("half-dialogue", "delta", h.delta),
    ];
    for (scope, metric, value) in rows {
        let _ = writeln!(csv, "{scope},{metric},{value}");
    }
    csv
}

fn cmd_eval(data: &Path, checkpoint_path: &Path, out: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path).map_err(runtime)?;
    let settings = checkpoint_settings(&checkpoint)?;
    let (store, nets) = checkpoint.restore().map_err(runtime)?;
    let validation = load_split(data, Split::Validation)?;
    let test = load_split(data, Split::Test)?;
    let evaluation = evaluate_model(&nets, &store, &validation, &test).map_err(runtime)?;
    let report = json!({ "config": settings.to_json(), "evaluation": evaluation });
    write_output(&out.join("metrics.json"), serde_json::to_string_pretty(&report).map_err(runtime)?.as_bytes())?;
    write_output(&out.join("metrics.csv"), metrics_csv(&settings, &evaluation).as_bytes())
}

fn cmd_sweep(data: &Path, protocol: Protocol, out: &Path, settings: &Settings) -> Result<()> {
    let splits = Splits {
        train: load_split(data, Split::Train)?,
        validation: load_split(data, Split::Validation)?,
        test: load_split(data, Split::Test)?,
    };
    let sweep = SweepConfig {
        protocol,
        base: settings.train.clone(),
        net: settings.net_config(&splits.train),
        n_seeds: settings.n_seeds,
        workers: settings.workers,
    };
    let result = run_protocol(&sweep, &splits).map_err(runtime)?;
    let mut csv = format!("# protocol: {protocol}\n").into_bytes();
    csv.extend(settings.render("# ").into_bytes());
    result.write_csv(&mut csv).map_err(runtime)?;
    write_output(&out.join(format!("{protocol}.csv")), &csv)
}

/// One merged row: mean and (where known) standard error of a metric.
type Summary = BTreeMap<(String, String), (String, String)>;

fn summarize(text: &str, source: &Path) -> Result<Summary> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().unwrap_or_default();
    let bad = |line: &str| CliError::Usage(format!("{}: malformed row {line:?}", source.display()));
    let mut out = Summary::new();
    match header {
        "protocol,cell,seed,metric,value" => {
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                let [protocol, cell, seed, metric, value] = f[..] else { return Err(bad(line)) };
                let entry = out
                    .entry((format!("{protocol}/{cell}"), metric.to_string()))
                    .or_default();
                match seed {
                    "mean" => entry.0 = value.to_string(),
                    "stderr" => entry.1 = value.to_string(),
                    _ => {}
                }
            }
            out.retain(|_, (mean, _)| !mean.is_empty());
        }
        "scope,metric,value" => {
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                let [scope, metric, value] = f[..] else { return Err(bad(line)) };
                out.insert((scope.to_string(), metric.to_string()), (value.to_string(), String::new()));
            }
        }
        other => {
            return Err(CliError::Usage(format!("{}: unrecognized CSV header {other:?}", source.display())));
        }
    }
    Ok(out)
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut csv = String::from("source,group,metric,mean,stderr\n");
    for input in inputs {
        let text = fs::read_to_string(input).map_err(|e| runtime(format!("{}: {e}", input.display())))?;
        for ((group, metric), (mean, se)) in summarize(&text, input)? {
            let _ = writeln!(csv, "{},{group},{metric},{mean},{se}", input.display());
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    write_output(out, csv.as_bytes())
}
