//! Experiment driver: trial grids, resumable storage and reports.

mod config;
mod pipeline;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{BenchConfig, Config, DataConfig, GraphConfig, GraphModel, Method, PindConfig};
pub use pipeline::{
    check_recovery, dt_times, extrapolation_check, generate_data, parse_pair, run_baseline, run_method, run_pind, run_search, run_trials,
    search_functions, trajectory_mse, DataKey, Extrapolation, PindRun, SimScore, TrialData, TrialResult,
};
pub use report::{aggregate, aggregates_csv, bootstrap_ci, mean, std_dev, Aggregate, BenchmarkReport, Environment};

use crate::error::{Error, Result};

/// Per-trial JSON files under `<root>/trials`, keyed by trial key.
#[derive(Debug, Clone)]
pub struct TrialStore {
    dir: PathBuf,
}

impl TrialStore {
    pub fn open(root: &Path) -> Result<TrialStore> {
        let dir = root.join("trials");
        std::fs::create_dir_all(&dir)?;
        Ok(TrialStore { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<TrialResult> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Write via a temporary file so an interrupted run never leaves a
    /// truncated trial behind.
    pub fn put(&self, t: &TrialResult) -> Result<()> {
        let tmp = self.dir.join(format!(".{}.tmp", t.key));
        std::fs::write(&tmp, serde_json::to_string_pretty(t)?)?;
        std::fs::rename(tmp, self.path(&t.key))?;
        Ok(())
    }

    pub fn all(&self) -> Result<Vec<TrialResult>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_str(&std::fs::read_to_string(&p)?)?);
            }
        }
        out.sort_by(|a: &TrialResult, b| a.key.cmp(&b.key));
        Ok(out)
    }
}

/// Clean data at the configured horizon for every system, graph and seed.
pub fn benchmark_keys(cfg: &Config) -> Vec<DataKey> {
    let snr = cfg.dynamics.snr_db.is_finite().then_some(cfg.dynamics.snr_db);
    let mut keys = Vec::new();
    for &dynamics in &cfg.dynamics.systems {
        for &model in &cfg.graph.models {
            for seed in 0..cfg.bench.seeds {
                keys.push(DataKey { dynamics, graph_model: model, graph_id: cfg.graph.id(model), seed, snr_db: snr, dt: None });
            }
        }
    }
    keys
}

/// Run every missing (key, method) trial, then build a report over exactly
/// the requested trials. `store = None` keeps everything in memory.
pub fn run_grid(cfg: &Config, name: &str, keys: &[DataKey], methods: &[Method], store: Option<&TrialStore>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let results: Vec<Result<Vec<TrialResult>>> = keys
        .par_iter()
        .map(|key| {
            let todo: Vec<Method> = methods
                .iter()
                .copied()
                .filter(|m| store.is_none_or(|s| s.get(&key.trial_key(*m)).is_none()))
                .collect();
            if todo.is_empty() {
                return Ok(Vec::new());
            }
            let trials = match run_trials(cfg, key, &todo) {
                Ok(t) => t,
                Err(e) => todo.iter().map(|&m| TrialResult::failed(key, m, &e, 0.0)).collect(),
            };
            if let Some(s) = store {
                for t in &trials {
                    s.put(t)?;
                }
            }
            Ok(trials)
        })
        .collect();
    let mut fresh = Vec::new();
    for r in results {
        fresh.extend(r?);
    }
    let trials = match store {
        None => fresh,
        Some(s) => keys
            .iter()
            .flat_map(|k| methods.iter().map(move |m| k.trial_key(*m)))
            .map(|key| s.get(&key).ok_or_else(|| Error::invalid(format!("trial {key} missing after run"))))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(BenchmarkReport::new(name, cfg, trials))
}

pub fn run_benchmark(cfg: &Config, store: Option<&TrialStore>) -> Result<BenchmarkReport> {
    run_grid(cfg, "bench", &benchmark_keys(cfg), &cfg.bench.methods, store)
}

/// Benchmark grid repeated at each noise level; `inf` is the clean control.
pub fn sweep_noise(cfg: &Config, snr_levels: &[f64], store: Option<&TrialStore>) -> Result<BenchmarkReport> {
    if snr_levels.is_empty() {
        return Err(Error::invalid("no noise levels"));
    }
    let keys: Vec<DataKey> = snr_levels
        .iter()
        .flat_map(|&db| benchmark_keys(cfg).into_iter().map(move |k| DataKey { snr_db: db.is_finite().then_some(db), ..k }))
        .collect();
    run_grid(cfg, "sweep-noise", &keys, &cfg.bench.methods, store)
}

/// Benchmark grid with timestamps `0, dt, ...` over the sweep horizon.
pub fn sweep_dt(cfg: &Config, dt_levels: &[f64], store: Option<&TrialStore>) -> Result<BenchmarkReport> {
    if dt_levels.is_empty() {
        return Err(Error::invalid("no sampling intervals"));
    }
    let keys: Vec<DataKey> =
        dt_levels.iter().flat_map(|&dt| benchmark_keys(cfg).into_iter().map(move |k| DataKey { dt: Some(dt), ..k })).collect();
    run_grid(cfg, "sweep-dt", &keys, &cfg.bench.methods, store)
}

/// Full method next to one ablated variant on the benchmark grid.
pub fn ablate(cfg: &Config, variant: Method, store: Option<&TrialStore>) -> Result<BenchmarkReport> {
    if !matches!(variant, Method::NoInterp | Method::NoCoord) {
        return Err(Error::invalid(format!("{variant} is not an ablation")));
    }
    run_grid(cfg, &format!("ablate-{variant}"), &benchmark_keys(cfg), &[Method::PiNdsr, variant], store)
}

/// Write `report.json`, `aggregates.csv` and `trials.csv` under `dir`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report.to_json())?)?;
    std::fs::write(dir.join("aggregates.csv"), report.aggregates_csv())?;
    std::fs::write(dir.join("trials.csv"), report.trials_csv())?;
    Ok(())
}
