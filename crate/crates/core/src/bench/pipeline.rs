//! One trial: generate data, run a method, score the result.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Config, GraphModel, Method};
use crate::dynamics::{add_noise, regular_times, sample_initial, simulate, DynamicsKind, DynamicsSpec, SimOptions, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{parse, skeleton_equiv, Expr};
use crate::gp::{coordinated_search, Func, SearchMode, SearchResult};
use crate::graph::Graph;
use crate::pind::{extract_refs, interpolate, train, Normalization, PindArch, PindModel, TrainOutcome};
use crate::rng::derive_seed;
use crate::sindy::{sindy, tp_sindy, SparseModel};

/// Where a trial's data comes from. Everything random in the trial is
/// derived from `data_seed`, which does not depend on the method or on the
/// noise level, so methods and sweep levels share the same graph, initial
/// state and clean trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataKey {
    pub dynamics: DynamicsKind,
    pub graph_model: GraphModel,
    pub graph_id: String,
    pub seed: usize,
    /// Observation noise; `None` is clean data.
    pub snr_db: Option<f64>,
    /// Sampling interval when the timestamps come from a dt sweep.
    pub dt: Option<f64>,
}

impl DataKey {
    pub fn data_seed(&self, master: u64) -> u64 {
        derive_seed(master, &format!("{}/{}/{}", self.dynamics.name(), self.graph_id, self.seed))
    }

    pub fn level(&self) -> String {
        let snr = match self.snr_db {
            Some(db) => format!("snr{db}"),
            None => "clean".to_string(),
        };
        match self.dt {
            Some(dt) => format!("{snr}-dt{dt}"),
            None => snr,
        }
    }

    pub fn trial_key(&self, method: Method) -> String {
        format!("{}_{}_{}_{}_seed{}", self.dynamics.name(), self.graph_id, self.level(), method.name(), self.seed)
    }
}

/// Graph, clean trajectory and the observations a method sees.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub key: DataKey,
    pub spec: DynamicsSpec,
    pub graph: Graph,
    pub clean: Trajectory,
    pub observed: Trajectory,
}

pub fn generate_data(cfg: &Config, key: &DataKey) -> Result<TrialData> {
    let seed = key.data_seed(cfg.seed);
    let graph = cfg.graph.build(key.graph_model, derive_seed(seed, "graph"))?;
    let spec = cfg.dynamics.spec(key.dynamics);
    let x0 = sample_initial(key.dynamics, graph.n_nodes(), derive_seed(seed, "x0"));
    let times = match key.dt {
        Some(dt) => dt_times(cfg.bench.dt_horizon, dt)?,
        None => regular_times(0.0, cfg.dynamics.t_end, cfg.dynamics.samples),
    };
    let clean = simulate(&spec, &graph, &x0, &times, &SimOptions::rk4_substeps(cfg.dynamics.sim_substeps))?;
    let observed = match key.snr_db {
        Some(db) => add_noise(&clean, db, derive_seed(seed, "noise"))?,
        None => clean.clone(),
    };
    Ok(TrialData { key: key.clone(), spec, graph, clean, observed })
}

/// Regular timestamps `0, dt, 2 dt, ...` up to `horizon`.
pub fn dt_times(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::invalid(format!("sampling interval {dt} does not fit in horizon {horizon}")));
    }
    let n = (horizon / dt + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| k as f64 * dt).collect())
}

/// Trained neural dynamics plus the densified trajectory it produces.
#[derive(Debug, Clone)]
pub struct PindRun {
    pub outcome: TrainOutcome,
    pub interpolated: Trajectory,
    pub wall_seconds: f64,
}

pub fn run_pind(cfg: &Config, data: &TrialData) -> Result<PindRun> {
    let start = Instant::now();
    let seed = derive_seed(data.key.data_seed(cfg.seed), "pind");
    let mut arch = PindArch::for_kind(data.key.dynamics);
    if cfg.pind.nonlinear_decoder {
        arch = arch.with_nonlinear_decoder();
    }
    let model = PindModel::new(arch, 1, Normalization::from_observations(&data.observed), seed)?;
    let outcome = train(&model, &data.graph, &data.observed, &cfg.pind.train_config(seed))?;
    let interpolated = interpolate(
        &outcome.model,
        &data.graph,
        &outcome.x0,
        data.observed.times(),
        cfg.pind.interp_factor,
        cfg.pind.substeps,
    )?;
    Ok(PindRun { outcome, interpolated, wall_seconds: start.elapsed().as_secs_f64() })
}

/// Operator set for a system: the configured one, plus the sigmoid where
/// the bench enables it.
pub fn search_functions(cfg: &Config, kind: DynamicsKind) -> Vec<Func> {
    let mut f = cfg.gp.functions.clone();
    if cfg.bench.sigmoid_systems.contains(&kind) && !f.contains(&Func::Sigmoid) {
        f.push(Func::Sigmoid);
    }
    f
}

/// Symbolic search for one of the search-based methods, using the neural
/// references from `pind`.
pub fn run_search(cfg: &Config, data: &TrialData, pind: &PindRun, method: Method) -> Result<SearchResult> {
    let mut gp = cfg.gp.clone();
    gp.functions = search_functions(cfg, data.key.dynamics);
    gp.seed = derive_seed(data.key.data_seed(cfg.seed), "gp");
    let refs = extract_refs(&pind.outcome.model).at_time(data.observed.times()[0]);
    let target = match method {
        Method::PiNdsr | Method::NoCoord => &pind.interpolated,
        Method::NoInterp => {
            // keep the integration step of the interpolated setting
            let per_obs = gp.fitness_substeps * cfg.pind.interp_factor;
            gp.fitness_substeps = (per_obs as f64 / gp.fitness_stride as f64).round().max(1.0) as usize;
            gp.fitness_stride = 1;
            &data.observed
        }
        _ => return Err(Error::invalid(format!("{method} is not a search method"))),
    };
    if method == Method::NoCoord {
        gp.mode = SearchMode::Joint;
    }
    coordinated_search(&refs, target, &data.graph, &gp)
}

pub fn run_baseline(cfg: &Config, data: &TrialData, method: Method) -> Result<SparseModel> {
    let lib = cfg.sindy.library()?;
    match method {
        Method::Sindy => sindy(&data.observed, &data.graph, &lib, cfg.sindy.lambda1, cfg.sindy.max_iters),
        Method::TpSindy => tp_sindy(&data.observed, &data.graph, &lib, &cfg.sindy),
        _ => Err(Error::invalid(format!("{method} is not a sparse-regression method"))),
    }
}

/// Both terms match the truth up to constants.
pub fn check_recovery(found: (&Expr, &Expr), truth: (&Expr, &Expr)) -> bool {
    skeleton_equiv(found.0, truth.0) && skeleton_equiv(found.1, truth.1)
}

/// Outcome of re-simulating a recovered pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimScore {
    Mse(f64),
    Diverged,
}

/// Simulate the pair from the first state of `clean` and compare at every
/// timestamp. Mean over nodes, dimensions and times.
pub fn trajectory_mse(found: (&Expr, &Expr), graph: &Graph, clean: &Trajectory) -> Result<SimScore> {
    let spec = DynamicsSpec::symbolic(found.0.clone(), found.1.clone())?;
    match simulate(&spec, graph, clean.state(0), clean.times(), &SimOptions::default()) {
        Ok(t) => {
            let m = t.mse(clean)?;
            Ok(if m.is_finite() { SimScore::Mse(m) } else { SimScore::Diverged })
        }
        Err(Error::Sim(_)) => Ok(SimScore::Diverged),
        Err(e) => Err(e),
    }
}

/// Interpolation and extrapolation error of a pair over `[0, t_end]` and
/// `(t_end, 2 t_end]`, both against the true system from `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub interpolation_mse: f64,
    pub extrapolation_mse: f64,
}

impl Extrapolation {
    pub fn ratio(&self) -> f64 {
        self.extrapolation_mse / self.interpolation_mse
    }
}

/// `samples` regular timestamps per window.
pub fn extrapolation_check(found: (&Expr, &Expr), truth: &DynamicsSpec, graph: &Graph, x0: &[f64], t_end: f64, samples: usize) -> Result<Extrapolation> {
    if samples < 2 {
        return Err(Error::invalid("need at least two samples per window"));
    }
    let times = regular_times(0.0, 2.0 * t_end, 2 * samples - 1);
    let opts = SimOptions::default();
    let reference = simulate(truth, graph, x0, &times, &opts)?;
    let spec = DynamicsSpec::symbolic(found.0.clone(), found.1.clone())?;
    let pred = simulate(&spec, graph, x0, &times, &opts)?;
    let inner = reference.slice(0..samples).mse(&pred.slice(0..samples))?;
    let outer = reference.slice(samples..times.len()).mse(&pred.slice(samples..times.len()))?;
    Ok(Extrapolation { interpolation_mse: inner, extrapolation_mse: outer })
}

/// One (data, method) cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub key: String,
    pub method: Method,
    pub dynamics: DynamicsKind,
    pub graph: String,
    pub seed: usize,
    pub snr_db: Option<f64>,
    pub dt: Option<f64>,
    pub recovered: bool,
    pub node_expr: Option<String>,
    pub edge_expr: Option<String>,
    /// Only for recovered pairs whose re-simulation stayed finite.
    pub traj_mse: Option<f64>,
    /// Re-simulation error of the found pair whether or not it was recovered.
    pub sim_mse: Option<f64>,
    pub diverged: bool,
    pub wall_time: f64,
    pub fitness_evaluations: Option<u64>,
    pub simulations: Option<u64>,
    pub generations: Option<usize>,
    pub pind_val_mse: Option<f64>,
    /// Set when the method itself failed.
    pub error: Option<String>,
}

impl TrialResult {
    fn empty(key: &DataKey, method: Method) -> TrialResult {
        TrialResult {
            key: key.trial_key(method),
            method,
            dynamics: key.dynamics,
            graph: key.graph_id.clone(),
            seed: key.seed,
            snr_db: key.snr_db,
            dt: key.dt,
            recovered: false,
            node_expr: None,
            edge_expr: None,
            traj_mse: None,
            sim_mse: None,
            diverged: false,
            wall_time: 0.0,
            fitness_evaluations: None,
            simulations: None,
            generations: None,
            pind_val_mse: None,
            error: None,
        }
    }

    pub fn failed(key: &DataKey, method: Method, err: &Error, wall_time: f64) -> TrialResult {
        TrialResult { error: Some(err.to_string()), wall_time, ..TrialResult::empty(key, method) }
    }
}

fn score(data: &TrialData, method: Method, node: &Expr, edge: &Expr, wall_time: f64) -> Result<TrialResult> {
    let (tn, te) = data.spec.exprs();
    let recovered = check_recovery((node, edge), (&tn, &te));
    let mut r = TrialResult {
        recovered,
        node_expr: Some(node.to_string()),
        edge_expr: Some(edge.to_string()),
        wall_time,
        ..TrialResult::empty(&data.key, method)
    };
    match trajectory_mse((node, edge), &data.graph, &data.clean)? {
        SimScore::Mse(m) => {
            r.sim_mse = Some(m);
            r.traj_mse = recovered.then_some(m);
        }
        SimScore::Diverged => r.diverged = true,
    }
    Ok(r)
}

/// Run `method` on prepared data. Search methods need the trained PIND.
pub fn run_method(cfg: &Config, data: &TrialData, pind: Option<&PindRun>, method: Method) -> Result<TrialResult> {
    let start = Instant::now();
    if method.uses_search() {
        let pind = pind.ok_or_else(|| Error::invalid(format!("{method} needs trained neural dynamics")))?;
        let res = run_search(cfg, data, pind, method)?;
        let wall = start.elapsed().as_secs_f64() + pind.wall_seconds;
        let mut r = score(data, method, &res.node, &res.edge, wall)?;
        r.fitness_evaluations = Some(res.fitness_evaluations);
        r.simulations = Some(res.simulations);
        r.generations = Some(res.generations);
        r.pind_val_mse = Some(pind.outcome.best_val);
        Ok(r)
    } else {
        let m = run_baseline(cfg, data, method)?;
        score(data, method, &m.node_expr()?, &m.edge_expr()?, start.elapsed().as_secs_f64())
    }
}

/// Every method for one data key. Method failures become failed trials.
pub fn run_trials(cfg: &Config, key: &DataKey, methods: &[Method]) -> Result<Vec<TrialResult>> {
    let data = generate_data(cfg, key)?;
    let start = Instant::now();
    let pind = if methods.iter().any(|m| m.uses_search()) { Some(run_pind(cfg, &data)) } else { None };
    let pind_wall = start.elapsed().as_secs_f64();
    Ok(methods
        .iter()
        .map(|&m| {
            let t = Instant::now();
            let out = match (&pind, m.uses_search()) {
                (Some(Err(e)), true) => Err(Error::Training(e.to_string())),
                (Some(Ok(p)), true) => run_method(cfg, &data, Some(p), m),
                _ => run_method(cfg, &data, None, m),
            };
            out.unwrap_or_else(|e| {
                let extra = if m.uses_search() { pind_wall } else { 0.0 };
                TrialResult::failed(key, m, &e, t.elapsed().as_secs_f64() + extra)
            })
        })
        .collect())
}

/// Parse a `node | edge` pair.
pub fn parse_pair(node: &str, edge: &str) -> Result<(Expr, Expr)> {
    Ok((parse(node)?, parse(edge)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_grid_includes_horizon() {
        let t = dt_times(2.0, 0.1).unwrap();
        assert_eq!(t.len(), 21);
        assert!((t[20] - 2.0).abs() < 1e-12);
        assert!(dt_times(1.0, 0.0).is_err());
    }

    #[test]
    fn truth_pair_recovers_and_resimulates() {
        let cfg = Config::default();
        let key = DataKey { dynamics: DynamicsKind::Sis, graph_model: GraphModel::Ba, graph_id: "ba".into(), seed: 0, snr_db: None, dt: None };
        let data = generate_data(&cfg, &key).unwrap();
        let (f, g) = data.spec.exprs();
        let r = score(&data, Method::PiNdsr, &f, &g, 0.0).unwrap();
        assert!(r.recovered);
        assert!(r.traj_mse.unwrap() < 1e-8);
    }
}
