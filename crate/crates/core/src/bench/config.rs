use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsKind, DynamicsSpec};
use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::graph::{gen_ba, gen_er, Graph};
use crate::pind::TrainConfig;
use crate::sindy::SindyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphModel {
    Ba,
    Er,
}

impl std::str::FromStr for GraphModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ba" => Ok(GraphModel::Ba),
            "er" => Ok(GraphModel::Er),
            _ => Err(Error::invalid(format!("unknown graph model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub models: Vec<GraphModel>,
    pub nodes: usize,
    /// Edges attached per new node in the BA model.
    pub ba_m: usize,
    pub er_p: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { models: vec![GraphModel::Ba], nodes: 50, ba_m: 3, er_p: 0.12 }
    }
}

impl GraphConfig {
    pub fn id(&self, model: GraphModel) -> String {
        match model {
            GraphModel::Ba => format!("ba{}-{}", self.nodes, self.ba_m),
            GraphModel::Er => format!("er{}-{}", self.nodes, self.er_p),
        }
    }

    pub fn build(&self, model: GraphModel, seed: u64) -> Result<Graph> {
        match model {
            GraphModel::Ba => gen_ba(self.nodes, self.ba_m, seed),
            GraphModel::Er => gen_er(self.nodes, self.er_p, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub systems: Vec<DynamicsKind>,
    /// Use `sigmoid(-tau (x_j - mu))` for WC.
    pub wc_flipped: bool,
    pub t_end: f64,
    pub samples: usize,
    /// Observation noise; `inf` means clean.
    pub snr_db: f64,
    /// RK4 substeps per sampling interval for ground truth.
    pub sim_substeps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { systems: vec![DynamicsKind::Kur], wc_flipped: false, t_end: 1.0, samples: 100, snr_db: f64::INFINITY, sim_substeps: 20 }
    }
}

impl DataConfig {
    pub fn spec(&self, kind: DynamicsKind) -> DynamicsSpec {
        match kind.spec() {
            DynamicsSpec::Wc { tau, mu, .. } => DynamicsSpec::Wc { tau, mu, flipped: self.wc_flipped },
            s => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PindConfig {
    pub epochs: usize,
    pub lr_candidates: Vec<f64>,
    pub weight_decay: f64,
    pub split: [f64; 3],
    pub substeps: usize,
    pub learn_x0: bool,
    pub nonlinear_decoder: bool,
    /// Density of the interpolated trajectory relative to the observations.
    pub interp_factor: usize,
}

impl Default for PindConfig {
    fn default() -> Self {
        PindConfig {
            epochs: 600,
            lr_candidates: vec![1e-2],
            weight_decay: 1e-3,
            split: [0.8, 0.1, 0.1],
            substeps: 1,
            learn_x0: true,
            nonlinear_decoder: false,
            interp_factor: 4,
        }
    }
}

impl PindConfig {
    pub fn paper() -> PindConfig {
        PindConfig { epochs: 1000, lr_candidates: vec![1e-3, 3e-3, 1e-2], ..Default::default() }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_candidates: self.lr_candidates.clone(),
            weight_decay: self.weight_decay,
            split: self.split,
            substeps: self.substeps,
            seed,
            learn_x0: self.learn_x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PiNdsr,
    /// Fitness against raw observations instead of the interpolation.
    NoInterp,
    /// Both populations evolve every generation.
    NoCoord,
    Sindy,
    TpSindy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PiNdsr => "pi-ndsr",
            Method::NoInterp => "no-interp",
            Method::NoCoord => "no-coord",
            Method::Sindy => "sindy",
            Method::TpSindy => "tp-sindy",
        }
    }

    pub fn uses_search(self) -> bool {
        matches!(self, Method::PiNdsr | Method::NoInterp | Method::NoCoord)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pi-ndsr" | "pindsr" | "full" => Ok(Method::PiNdsr),
            "no-interp" => Ok(Method::NoInterp),
            "no-coord" => Ok(Method::NoCoord),
            "sindy" => Ok(Method::Sindy),
            "tp-sindy" | "tpsindy" => Ok(Method::TpSindy),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: usize,
    pub methods: Vec<Method>,
    /// Systems for which the search also gets the sigmoid primitive.
    pub sigmoid_systems: Vec<DynamicsKind>,
    pub snr_levels: Vec<f64>,
    pub dt_levels: Vec<f64>,
    /// Time horizon of the sampling-interval sweep.
    pub dt_horizon: f64,
    pub bootstrap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: 5,
            methods: vec![Method::PiNdsr, Method::Sindy, Method::TpSindy],
            sigmoid_systems: vec![DynamicsKind::Wc],
            snr_levels: vec![f64::INFINITY, 70.0, 60.0, 50.0, 40.0, 35.0, 30.0, 25.0],
            dt_levels: vec![0.01, 0.02, 0.05, 0.1],
            dt_horizon: 2.0,
            bootstrap: 1000,
        }
    }
}

/// Every experiment setting, one section per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub graph: GraphConfig,
    pub dynamics: DataConfig,
    pub pind: PindConfig,
    pub gp: GpConfig,
    pub sindy: SindyConfig,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            graph: GraphConfig::default(),
            dynamics: DataConfig::default(),
            pind: PindConfig::default(),
            gp: GpConfig::default(),
            sindy: SindyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Config {
    /// Large-scale settings: 200-node graphs, 100 trials, full GP budget.
    pub fn paper() -> Config {
        let mut c = Config::default();
        c.apply_paper_scale();
        c
    }

    pub fn apply_paper_scale(&mut self) {
        self.graph.nodes = 200;
        self.graph.er_p = 0.03;
        self.bench.seeds = 100;
        self.pind = PindConfig::paper();
        self.gp = GpConfig { seed: self.gp.seed, mode: self.gp.mode, functions: self.gp.functions.clone(), ..GpConfig::paper() };
    }

    pub fn from_toml(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Config> {
        Config::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gp.validate()?;
        if self.graph.nodes == 0 {
            return Err(Error::Config("graph needs nodes".into()));
        }
        if self.dynamics.samples < 2 || !(self.dynamics.t_end > 0.0) {
            return Err(Error::Config("need at least two samples over a positive horizon".into()));
        }
        if self.pind.interp_factor == 0 || self.pind.epochs == 0 || self.pind.lr_candidates.is_empty() {
            return Err(Error::Config("pind needs epochs, learning rates and a positive interpolation factor".into()));
        }
        if self.sindy.node_terms.is_empty() && self.sindy.edge_terms.is_empty() {
            return Err(Error::Config("sparse regression library is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        let c = Config::from_toml("seed = 7\n[bench]\nseeds = 2\nmethods = [\"tp-sindy\"]\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.bench.seeds, 2);
        assert_eq!(c.bench.methods, vec![Method::TpSindy]);
        assert_eq!(c.graph, GraphConfig::default());
        assert!(Config::from_toml("[graph]\nnodez = 3\n").is_err());
    }

    #[test]
    fn paper_scale_overrides() {
        let c = Config::paper();
        assert_eq!(c.graph.nodes, 200);
        assert_eq!(c.bench.seeds, 100);
        assert_eq!(c.gp.population, 200);
        assert_eq!(c.gp.generations, 50);
    }
}
