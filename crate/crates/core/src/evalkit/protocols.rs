//! Sweep protocols: low-resource curves, the rate-ratio × λ grid, and SD-vs-SL
//! convergence curves. Every cell is repeated over `n_seeds` consecutive seeds.
//!
//! Runs are independent, so they may execute on several worker threads; results
//! are always collected in (cell, seed) order and do not depend on the worker
//! count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate_model, EvalError, Evaluation};
use crate::nets::NetConfig;
use crate::synthetic::Splits;
use crate::trainer::{train, TrainConfig, TrainError, TrainLog, TrainMode};

pub const LOW_RESOURCE_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
/// `l_pi / l_phi` values of the grid (with `l_phi = 1`).
pub const GRID_RATIOS: [f64; 4] = [100.0, 10.0, 1.0, 0.1];
pub const GRID_LAMBDAS: [f64; 4] = [10.0, 1.0, 0.1, 0.01];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("cell {cell}, seed {seed}: {source}")]
    Train {
        cell: String,
        seed: u64,
        #[source]
        source: TrainError,
    },
    #[error("cell {cell}, seed {seed}: {source}")]
    Eval {
        cell: String,
        seed: u64,
        #[source]
        source: EvalError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    LowResource,
    HpGrid,
    Convergence,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::LowResource => "low-resource",
            Protocol::HpGrid => "hp-grid",
            Protocol::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low-resource" => Ok(Protocol::LowResource),
            "hp-grid" => Ok(Protocol::HpGrid),
            "convergence" => Ok(Protocol::Convergence),
            other => Err(ProtocolError::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub protocol: Protocol,
    /// Shared settings; `seed` is the first seed of each cell.
    pub base: TrainConfig,
    pub net: NetConfig,
    pub n_seeds: usize,
    pub workers: usize,
}

impl SweepConfig {
    pub fn new(protocol: Protocol, base: TrainConfig, net: NetConfig) -> Self {
        Self {
            protocol,
            base,
            net,
            n_seeds: 5,
            workers: 1,
        }
    }
}

/// One grid point: a label such as `ratio=10;lambda=0.1`, the training-data
/// fraction and the resolved training config (seed filled in per run).
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub fraction: f64,
    pub cfg: TrainConfig,
}

pub fn cells(protocol: Protocol, base: &TrainConfig) -> Vec<Cell> {
    match protocol {
        Protocol::LowResource => LOW_RESOURCE_FRACTIONS
            .iter()
            .map(|&fraction| Cell {
                label: format!("fraction={fraction}"),
                fraction,
                cfg: base.clone(),
            })
            .collect(),
        Protocol::HpGrid => GRID_RATIOS
            .iter()
            .flat_map(|&ratio| {
                GRID_LAMBDAS.iter().map(move |&lambda| {
                    let mut cfg = base.clone();
                    cfg.rate_mult_pi = ratio;
                    cfg.rate_mult_phi = 1.0;
                    cfg.objective.lambda = lambda;
                    cfg.mode = TrainMode::Sd;
                    Cell {
                        label: format!("ratio={ratio};lambda={lambda}"),
                        fraction: 1.0,
                        cfg,
                    }
                })
            })
            .collect(),
        Protocol::Convergence => [(TrainMode::Sd, "sd"), (TrainMode::SlBaseline, "sl-baseline")]
            .into_iter()
            .map(|(mode, name)| Cell {
                label: format!("mode={name}"),
                fraction: 1.0,
                cfg: TrainConfig { mode, ..base.clone() },
            })
            .collect(),
    }
}

/// Outcome of one (cell, seed) run, evaluated at its best checkpoint.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub cell: String,
    pub seed: u64,
    pub evaluation: Evaluation,
    pub log: TrainLog,
    pub best_iteration: usize,
    pub best_val_nlp: f64,
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.log.diverged
    }

    fn metrics(&self) -> Vec<(&'static str, f64)> {
        let m = &self.evaluation.metrics;
        let h = &self.evaluation.halves;
        vec![
            ("accuracy", m.accuracy),
            ("auc", m.auc),
            ("aps", m.aps),
            ("neg_log_prob", m.neg_log_prob),
            ("threshold", m.threshold),
            ("first_half_accuracy", h.first_half),
            ("second_half_accuracy", h.second_half),
            ("half_delta", h.delta),
            ("best_iteration", self.best_iteration as f64),
            ("best_val_nlp", self.best_val_nlp),
            ("diverged", f64::from(u8::from(self.log.diverged))),
            ("faults", self.log.faults as f64),
        ]
    }
}

/// Seed column of a result row: a run seed or a summary statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowSeed {
    Run(u64),
    Mean,
    StdErr,
}

impl fmt::Display for RowSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowSeed::Run(s) => write!(f, "{s}"),
            RowSeed::Mean => f.write_str("mean"),
            RowSeed::StdErr => f.write_str("stderr"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub cell: String,
    pub seed: RowSeed,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub runs: Vec<RunSummary>,
}

impl ProtocolResult {
    /// Runs belonging to one cell, in seed order.
    pub fn cell_runs<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunSummary> + 'a {
        self.runs.iter().filter(move |r| r.cell == label)
    }

    /// Per-run rows followed by mean / standard-error rows for every
    /// (cell, metric). Convergence sweeps add one cell per logged iteration.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for (metric, value) in run.metrics() {
                rows.push(self.row(&run.cell, RowSeed::Run(run.seed), metric, value));
            }
            if self.protocol == Protocol::Convergence {
                for r in &run.log.records {
                    let cell = format!("{};iteration={}", run.cell, r.iteration);
                    for (metric, value) in [
                        ("val_nlp", r.val_nlp),
                        ("val_acc", r.val_acc),
                        ("j_oil", r.j_oil),
                        ("j_sl", r.j_sl),
                    ] {
                        rows.push(self.row(&cell, RowSeed::Run(run.seed), metric, value));
                    }
                }
            }
        }

        // Group in first-appearance order so the output is deterministic.
        let mut groups: Vec<((String, String), Vec<f64>)> = Vec::new();
        for r in &rows {
            let key = (r.cell.clone(), r.metric.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, values)) => values.push(r.value),
                None => groups.push((key, vec![r.value])),
            }
        }
        for ((cell, metric), values) in groups {
            let (mean, se) = mean_stderr(&values);
            rows.push(self.row(&cell, RowSeed::Mean, &metric, mean));
            rows.push(self.row(&cell, RowSeed::StdErr, &metric, se));
        }
        rows
    }

    fn row(&self, cell: &str, seed: RowSeed, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            protocol: self.protocol,
            cell: cell.to_string(),
            seed,
            metric: metric.to_string(),
            value,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "protocol,cell,seed,metric,value")?;
        for r in self.rows() {
            writeln!(w, "{},{},{},{},{}", r.protocol, r.cell, r.seed, r.metric, r.value)?;
        }
        Ok(())
    }
}

/// Sample mean and standard error (`sd / sqrt(n)`, zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains and evaluates one cell at one seed.
pub fn run_cell(cell: &Cell, seed: u64, splits: &Splits, net: &NetConfig) -> Result<RunSummary, ProtocolError> {
    let cfg = TrainConfig {
        seed,
        ..cell.cfg.clone()
    };
    let train_set = splits.train.subsample_dialogues(cell.fraction, seed);
    let train_err = |source| ProtocolError::Train {
        cell: cell.label.clone(),
        seed,
        source,
    };
    let outcome = train(&train_set, Some(&splits.validation), net, &cfg).map_err(train_err)?;
    let evaluation =
        evaluate_model(&outcome.nets, &outcome.store, &splits.validation, &splits.test).map_err(|source| {
            ProtocolError::Eval {
                cell: cell.label.clone(),
                seed,
                source,
            }
        })?;
    Ok(RunSummary {
        cell: cell.label.clone(),
        seed,
        evaluation,
        best_iteration: outcome.best.iteration,
        best_val_nlp: outcome.best.val_nlp,
        log: outcome.log,
    })
}

/// Runs every (cell, seed) of the protocol. Diverged runs are kept and flagged.
pub fn run_protocol(sweep: &SweepConfig, splits: &Splits) -> Result<ProtocolResult, ProtocolError> {
    if sweep.n_seeds == 0 {
        return Err(ProtocolError::Config("n_seeds must be positive".into()));
    }
    if splits.iter().any(|d| d.is_empty()) {
        return Err(ProtocolError::Config("train, validation and test splits must be non-empty".into()));
    }
    let cells = cells(sweep.protocol, &sweep.base);
    let jobs: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| (0..sweep.n_seeds as u64).map(move |i| (c, sweep.base.seed + i)))
        .collect();
    let runs = run_jobs(&jobs, sweep.workers, |&(cell, seed)| run_cell(cell, seed, splits, &sweep.net))?;
    Ok(ProtocolResult {
        protocol: sweep.protocol,
        runs,
    })
}

/// Applies `f` to every job on up to `workers` threads, preserving job order.
fn run_jobs<J: Sync, T: Send, E: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> Result<T, E> + Sync,
) -> Result<Vec<T>, E> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, E>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let result = f(job);
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, preset, PresetSpec};

    fn tiny() -> (Splits, NetConfig, TrainConfig) {
        let mut spec = preset("drift-easy", 3).unwrap();
        if let PresetSpec::Tabular { dialogues, .. } = &mut spec {
            *dialogues = (10, 4, 4);
        }
        let splits = generate(&spec).unwrap().splits;
        let mut net = NetConfig::for_dataset(&splits.train);
        net.hidden = 8;
        net.policy_encoder.output_dim = 6;
        net.value_encoder.output_dim = 6;
        let cfg = TrainConfig {
            max_iterations: 20,
            eval_every: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        (splits, net, cfg)
    }

    #[test]
    fn grid_has_sixteen_cells() {
        let grid = cells(Protocol::HpGrid, &TrainConfig::default());
        assert_eq!(grid.len(), 16);
        let c = grid.iter().find(|c| c.label == "ratio=0.1;lambda=10").unwrap();
        assert_eq!((c.cfg.rate_mult_pi, c.cfg.rate_mult_phi, c.cfg.objective.lambda), (0.1, 1.0, 10.0));
        assert_eq!(cells(Protocol::LowResource, &TrainConfig::default()).len(), 5);
        assert_eq!(cells(Protocol::Convergence, &TrainConfig::default()).len(), 2);
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [Protocol::LowResource, Protocol::HpGrid, Protocol::Convergence] {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("grid".parse::<Protocol>().is_err());
    }

    #[test]
    fn mean_stderr_values() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn full_fraction_matches_plain_training() {
        let (splits, net, cfg) = tiny();
        let cell = &cells(Protocol::LowResource, &cfg)[4];
        assert_eq!(cell.fraction, 1.0);
        let run = run_cell(cell, 11, &splits, &net).unwrap();
        let plain = train(&splits.train, Some(&splits.validation), &net, &TrainConfig { seed: 11, ..cfg }).unwrap();
        assert_eq!(run.log, plain.log);
        assert_eq!(run.best_val_nlp, plain.best.val_nlp);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (splits, net, cfg) = tiny();
        let mut sweep = SweepConfig::new(Protocol::Convergence, cfg, net);
        sweep.n_seeds = 2;
        let serial = run_protocol(&sweep, &splits).unwrap();
        sweep.workers = 3;
        let parallel = run_protocol(&sweep, &splits).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        serial.write_csv(&mut a).unwrap();
        parallel.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(serial.runs.len(), 4);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("convergence,mode=sd;iteration=10,0,val_nlp,"));
        assert!(text.contains("convergence,mode=sl-baseline,mean,accuracy,"));
        assert!(text.contains("convergence,mode=sl-baseline,stderr,accuracy,"));
    }

    #[test]
    fn rejects_empty_sweeps() {
        let (splits, net, cfg) = tiny();
        let mut sweep = SweepConfig::new(Protocol::LowResource, cfg, net);
        sweep.n_seeds = 0;
        assert!(matches!(run_protocol(&sweep, &splits), Err(ProtocolError::Config(_))));
    }
}
