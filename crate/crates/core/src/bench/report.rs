use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{Config, Method};
use super::pipeline::TrialResult;
use crate::dynamics::DynamicsKind;
use crate::rng::rng;

/// Summary of every trial sharing (dynamics, graph, method, noise, dt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dynamics: DynamicsKind,
    pub graph: String,
    pub method: Method,
    pub snr_db: Option<f64>,
    pub dt: Option<f64>,
    pub trials: usize,
    /// Trials where the method itself errored (counted as not recovered).
    pub failed: usize,
    pub recovered: usize,
    pub rec_prob: f64,
    pub rec_ci: (f64, f64),
    /// Over recovered trials whose re-simulation stayed finite.
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub mse_ci: Option<(f64, f64)>,
    /// Recovered trials whose re-simulation blew up.
    pub diverged: usize,
    /// Re-simulation error over every trial that produced a finite pair.
    pub sim_mse_mean: Option<f64>,
    pub mean_wall_time: f64,
}

impl Aggregate {
    /// MSE in units of 1e-2.
    pub fn mse_x100(&self) -> Option<f64> {
        self.mse_mean.map(|m| m * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Environment {
        Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub name: String,
    pub config: Config,
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
    pub environment: Environment,
}

impl BenchmarkReport {
    pub fn new(name: &str, config: &Config, mut trials: Vec<TrialResult>) -> BenchmarkReport {
        trials.sort_by(|a, b| a.key.cmp(&b.key));
        let aggregates = aggregate(&trials, config.bench.bootstrap, config.seed);
        BenchmarkReport { name: name.to_string(), config: config.clone(), trials, aggregates, environment: Environment::current() }
    }

    pub fn find(&self, dynamics: DynamicsKind, method: Method) -> Vec<&Aggregate> {
        self.aggregates.iter().filter(|a| a.dynamics == dynamics && a.method == method).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn aggregates_csv(&self) -> String {
        aggregates_csv(&self.aggregates)
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from("key,method,dynamics,graph,seed,snr_db,dt,recovered,traj_mse,sim_mse,diverged,wall_time,node,edge,error\n");
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{}",
                t.key,
                t.method,
                t.dynamics.name(),
                t.graph,
                t.seed,
                opt(t.snr_db),
                opt(t.dt),
                t.recovered,
                opt(t.traj_mse),
                opt(t.sim_mse),
                t.diverged,
                t.wall_time,
                quote(t.node_expr.as_deref().unwrap_or("")),
                quote(t.edge_expr.as_deref().unwrap_or("")),
                quote(t.error.as_deref().unwrap_or("")),
            );
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn aggregates_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from(
        "dynamics,graph,method,snr_db,dt,trials,failed,recovered,rec_prob,rec_ci_lo,rec_ci_hi,mse,mse_std,mse_x100,mse_ci_lo,mse_ci_hi,diverged,sim_mse,mean_wall_time\n",
    );
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            a.dynamics.name(),
            a.graph,
            a.method,
            opt(a.snr_db),
            opt(a.dt),
            a.trials,
            a.failed,
            a.recovered,
            a.rec_prob,
            a.rec_ci.0,
            a.rec_ci.1,
            opt(a.mse_mean),
            opt(a.mse_std),
            opt(a.mse_x100()),
            opt(a.mse_ci.map(|c| c.0)),
            opt(a.mse_ci.map(|c| c.1)),
            a.diverged,
            opt(a.sim_mse_mean),
            a.mean_wall_time,
        );
    }
    s
}

type GroupKey = (String, String, Method, String, String);

fn group_key(t: &TrialResult) -> GroupKey {
    // f64 is not Ord; the formatted value groups and sorts stably
    (t.dynamics.name().to_string(), t.graph.clone(), t.method, format!("{:?}", t.snr_db), format!("{:?}", t.dt))
}

/// Deterministic in `(trials, resamples, seed)`.
pub fn aggregate(trials: &[TrialResult], resamples: usize, seed: u64) -> Vec<Aggregate> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialResult>> = BTreeMap::new();
    for t in trials {
        groups.entry(group_key(t)).or_default().push(t);
    }
    groups
        .into_values()
        .enumerate()
        .map(|(g, mut ts)| {
            // floating-point sums depend on order
            ts.sort_by(|a, b| a.key.cmp(&b.key));
            let first = ts[0];
            let rec: Vec<f64> = ts.iter().map(|t| if t.recovered { 1.0 } else { 0.0 }).collect();
            let mse: Vec<f64> = ts.iter().filter_map(|t| t.traj_mse).collect();
            let seed = seed.wrapping_add(g as u64);
            Aggregate {
                dynamics: first.dynamics,
                graph: first.graph.clone(),
                method: first.method,
                snr_db: first.snr_db,
                dt: first.dt,
                trials: ts.len(),
                failed: ts.iter().filter(|t| t.error.is_some()).count(),
                recovered: ts.iter().filter(|t| t.recovered).count(),
                rec_prob: mean(&rec),
                rec_ci: bootstrap_ci(&rec, resamples, seed),
                mse_mean: (!mse.is_empty()).then(|| mean(&mse)),
                mse_std: (!mse.is_empty()).then(|| std_dev(&mse)),
                mse_ci: (!mse.is_empty()).then(|| bootstrap_ci(&mse, resamples, seed ^ 0x9e37)),
                diverged: ts.iter().filter(|t| t.recovered && t.diverged).count(),
                sim_mse_mean: {
                    let all: Vec<f64> = ts.iter().filter_map(|t| t.sim_mse).collect();
                    (!all.is_empty()).then(|| mean(&all))
                },
                mean_wall_time: mean(&ts.iter().map(|t| t.wall_time).collect::<Vec<_>>()),
            }
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_ci(v: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if resamples == 0 || v.len() == 1 {
        let m = mean(v);
        return (m, m);
    }
    let mut r = rng(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..v.len()).map(|_| v[r.random_range(0..v.len())]).sum::<f64>() / v.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_brackets_the_mean() {
        let v: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let (lo, hi) = bootstrap_ci(&v, 1000, 3);
        assert!(lo < 9.5 && 9.5 < hi);
        assert!(lo > 5.0 && hi < 14.0);
        assert_eq!(bootstrap_ci(&[1.0, 1.0, 1.0], 100, 0), (1.0, 1.0));
    }
}
