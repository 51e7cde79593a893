//! Genetic programming over expression trees and the coordinated two-population
//! search for node and edge dynamics.

mod fitness;
mod search;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use fitness::{pair_fitness, FitnessTarget, PairOutcome, FAILURE_ERROR};
pub use search::{coordinated_search, coordinated_search_seeded, population_distance, sample_points, Evolved, GenerationRecord, References, SearchMode, SearchResult, TruthRefs};

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Expr, UnaryOp, Var};
use crate::rng::Rng;

/// Which term a population models; fixes the legal variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Node,
    Edge,
}

impl Role {
    pub fn vars(self, use_time: bool) -> Vec<Var> {
        let mut v = match self {
            Role::Node => vec![Var::Xi],
            Role::Edge => vec![Var::Xi, Var::Xj],
        };
        if use_time {
            v.push(Var::T);
        }
        v
    }

    pub fn admits(self, e: &Expr) -> bool {
        self == Role::Edge || !e.uses(Var::Xj)
    }
}

/// Interior node choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Sigmoid,
    Neg,
}

impl Func {
    pub fn arity(self) -> usize {
        match self {
            Func::Add | Func::Sub | Func::Mul | Func::Div => 2,
            _ => 1,
        }
    }

    fn build(self, mut args: Vec<Expr>) -> Expr {
        match self {
            Func::Add | Func::Sub | Func::Mul | Func::Div => {
                let r = args.pop().unwrap();
                let l = args.pop().unwrap();
                let op = match self {
                    Func::Add => BinaryOp::Add,
                    Func::Sub => BinaryOp::Sub,
                    Func::Mul => BinaryOp::Mul,
                    _ => BinaryOp::Div,
                };
                Expr::binary(op, l, r)
            }
            _ => {
                let op = match self {
                    Func::Sin => UnaryOp::Sin,
                    Func::Cos => UnaryOp::Cos,
                    Func::Exp => UnaryOp::Exp,
                    Func::Sigmoid => UnaryOp::Sigmoid,
                    _ => UnaryOp::Neg,
                };
                Expr::unary(op, args.pop().unwrap())
            }
        }
    }
}

/// Standard function set: `+ - * / sin cos exp`.
pub fn default_functions() -> Vec<Func> {
    vec![Func::Add, Func::Sub, Func::Mul, Func::Div, Func::Sin, Func::Cos, Func::Exp]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScale {
    /// Tournament on `-error - parsimony * size`.
    Linear,
    /// Tournament on `-log10(error) - parsimony * size`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    /// Stop once some pair's trajectory error is at or below this.
    pub epsilon: f64,
    pub k: usize,
    pub p_crossover: f64,
    pub p_subtree: f64,
    pub p_hoist: f64,
    pub p_point: f64,
    /// Per-node replacement probability inside a point mutation.
    pub p_point_replace: f64,
    pub parsimony: f64,
    pub selection: SelectionScale,
    pub tournament: usize,
    pub const_range: (f64, f64),
    pub init_depth: (usize, usize),
    /// Offspring larger than this are replaced by their parent.
    pub max_size: usize,
    pub functions: Vec<Func>,
    pub use_time: bool,
    /// RK4 substeps per compared interval of the fitness trajectory.
    pub fitness_substeps: usize,
    /// Compare against every `fitness_stride`-th timestamp of the target.
    pub fitness_stride: usize,
    pub distance_samples: usize,
    /// Pattern-search evaluations spent polishing each final expression.
    pub refine_budget: usize,
    /// Reuse pair errors across generations, keyed by canonical form.
    pub cache: bool,
    /// Stop a partner simulation once it cannot enter the top K.
    pub early_abort: bool,
    pub mode: SearchMode,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 100,
            generations: 30,
            epsilon: 1e-5,
            k: 20,
            p_crossover: 0.6,
            p_subtree: 0.1,
            p_hoist: 0.05,
            p_point: 0.1,
            p_point_replace: 0.05,
            parsimony: 0.01,
            selection: SelectionScale::Linear,
            tournament: 20,
            const_range: (-1.0, 1.0),
            init_depth: (2, 5),
            max_size: 40,
            functions: default_functions(),
            use_time: false,
            fitness_substeps: 1,
            fitness_stride: 4,
            distance_samples: 200,
            refine_budget: 200,
            cache: true,
            early_abort: true,
            mode: SearchMode::Coordinated,
            seed: 0,
        }
    }
}

impl GpConfig {
    /// Full-size search: population 200 for 50 generations, four RK4
    /// substeps at every target timestamp.
    pub fn paper() -> GpConfig {
        GpConfig { population: 200, generations: 50, fitness_substeps: 4, fitness_stride: 1, ..GpConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let p = [self.p_crossover, self.p_subtree, self.p_hoist, self.p_point];
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || p.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("variation probabilities {p:?} must lie in [0, 1] and sum to at most 1")));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.fitness_substeps == 0 || self.fitness_stride == 0 {
            return Err(Error::Config("fitness substeps and stride must be positive".into()));
        }
        if self.population == 0 || self.tournament == 0 {
            return Err(Error::Config("population and tournament size must be positive".into()));
        }
        if self.functions.is_empty() {
            return Err(Error::Config("empty function set".into()));
        }
        if self.init_depth.0 > self.init_depth.1 {
            return Err(Error::Config("init depth range is reversed".into()));
        }
        if !(self.const_range.0 < self.const_range.1) {
            return Err(Error::Config("empty constant range".into()));
        }
        Ok(())
    }

    fn random_terminal(&self, role: Role, rng: &mut Rng) -> Expr {
        let vars = role.vars(self.use_time);
        let k = rng.random_range(0..=vars.len());
        if k == vars.len() {
            Expr::Const(rng.random_range(self.const_range.0..self.const_range.1))
        } else {
            Expr::Var(vars[k])
        }
    }

    fn random_function(&self, rng: &mut Rng) -> Func {
        self.functions[rng.random_range(0..self.functions.len())]
    }

    /// Random tree of at most `depth` levels below the root. `full` grows
    /// every branch to `depth`; otherwise branches stop at random. The root
    /// is always a function when `depth > 0`.
    pub fn random_tree(&self, role: Role, depth: usize, full: bool, rng: &mut Rng) -> Expr {
        let n_terms = role.vars(self.use_time).len() + 1;
        let n_funcs = self.functions.len();
        fn go(cfg: &GpConfig, role: Role, depth: usize, full: bool, root: bool, nt: usize, nf: usize, rng: &mut Rng) -> Expr {
            let pick_func = depth > 0 && (full || root || rng.random_range(0..nt + nf) < nf);
            if !pick_func {
                return cfg.random_terminal(role, rng);
            }
            let f = cfg.random_function(rng);
            let args = (0..f.arity()).map(|_| go(cfg, role, depth - 1, full, false, nt, nf, rng)).collect();
            f.build(args)
        }
        go(self, role, depth, full, true, n_terms, n_funcs, rng)
    }
}

/// Ramped half-and-half initial population.
pub fn init_population(role: Role, cfg: &GpConfig, rng: &mut Rng) -> Vec<Expr> {
    let (lo, hi) = cfg.init_depth;
    (0..cfg.population)
        .map(|k| {
            let depth = rng.random_range(lo..=hi);
            cfg.random_tree(role, depth, k % 2 == 0, rng)
        })
        .collect()
}

/// Pre-order index of a random subtree, favouring interior nodes 9:1.
fn random_node(e: &Expr, rng: &mut Rng) -> usize {
    let mut weights = Vec::with_capacity(e.size());
    e.visit(&mut |n| weights.push(if n.is_leaf() { 0.1 } else { 0.9 }));
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (k, w) in weights.iter().enumerate() {
        if r < *w {
            return k;
        }
        r -= w;
    }
    weights.len() - 1
}

pub fn crossover(parent: &Expr, donor: &Expr, rng: &mut Rng) -> Expr {
    let mut child = parent.clone();
    let at = random_node(parent, rng);
    let piece = donor.subtree(random_node(donor, rng)).unwrap().clone();
    *child.subtree_mut(at).unwrap() = piece;
    child
}

pub fn subtree_mutation(parent: &Expr, role: Role, cfg: &GpConfig, rng: &mut Rng) -> Expr {
    let depth = rng.random_range(cfg.init_depth.0..=cfg.init_depth.1);
    let chicken = cfg.random_tree(role, depth, rng.random_bool(0.5), rng);
    crossover(parent, &chicken, rng)
}

pub fn hoist_mutation(parent: &Expr, rng: &mut Rng) -> Expr {
    let at = random_node(parent, rng);
    let sub = parent.subtree(at).unwrap();
    let hoisted = sub.subtree(random_node(sub, rng)).unwrap().clone();
    let mut child = parent.clone();
    *child.subtree_mut(at).unwrap() = hoisted;
    child
}

pub fn point_mutation(parent: &Expr, role: Role, cfg: &GpConfig, rng: &mut Rng) -> Expr {
    fn go(e: &mut Expr, role: Role, cfg: &GpConfig, rng: &mut Rng) {
        let replace = rng.random_bool(cfg.p_point_replace.clamp(0.0, 1.0));
        match e {
            Expr::Unary(_, a) => {
                if replace {
                    let same: Vec<Func> = cfg.functions.iter().copied().filter(|f| f.arity() == 1).collect();
                    if !same.is_empty() {
                        let f = same[rng.random_range(0..same.len())];
                        let arg = std::mem::replace(a.as_mut(), Expr::Const(0.0));
                        *e = f.build(vec![arg]);
                    }
                }
                if let Expr::Unary(_, a) = e {
                    go(a, role, cfg, rng);
                }
            }
            Expr::Binary(_, l, r) => {
                if replace {
                    let same: Vec<Func> = cfg.functions.iter().copied().filter(|f| f.arity() == 2).collect();
                    if !same.is_empty() {
                        let f = same[rng.random_range(0..same.len())];
                        let l2 = std::mem::replace(l.as_mut(), Expr::Const(0.0));
                        let r2 = std::mem::replace(r.as_mut(), Expr::Const(0.0));
                        *e = f.build(vec![l2, r2]);
                    }
                }
                if let Expr::Binary(_, l, r) = e {
                    go(l, role, cfg, rng);
                    go(r, role, cfg, rng);
                }
            }
            _ => {
                if replace {
                    *e = cfg.random_terminal(role, rng);
                }
            }
        }
    }
    let mut child = parent.clone();
    go(&mut child, role, cfg, rng);
    child
}

/// Score used by tournaments: raw fitness (`-error`) mapped by the selection
/// scale, minus the parsimony penalty.
pub fn selection_score(raw: f64, size: usize, cfg: &GpConfig) -> f64 {
    let base = match cfg.selection {
        SelectionScale::Linear => raw,
        SelectionScale::Log => -(-raw).max(1e-300).log10(),
    };
    base - cfg.parsimony * size as f64
}

fn tournament(scores: &[f64], size: usize, rng: &mut Rng) -> usize {
    let mut best = rng.random_range(0..scores.len());
    for _ in 1..size {
        let c = rng.random_range(0..scores.len());
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Next generation: the member with the highest raw fitness survives
/// unchanged; the rest come from tournament selection followed by crossover,
/// subtree, hoist or point mutation, or plain reproduction.
pub fn evolve_step(pop: &[Expr], raw_fitness: &[f64], role: Role, cfg: &GpConfig, rng: &mut Rng) -> Result<Vec<Expr>> {
    if pop.len() != raw_fitness.len() || pop.is_empty() {
        return Err(Error::Shape(format!("{} members with {} fitness values", pop.len(), raw_fitness.len())));
    }
    let scores: Vec<f64> = pop.iter().zip(raw_fitness).map(|(e, &f)| selection_score(f, e.size(), cfg)).collect();
    let elite = (0..pop.len()).max_by(|&a, &b| raw_fitness[a].total_cmp(&raw_fitness[b]).then(b.cmp(&a))).unwrap();
    let mut next = Vec::with_capacity(pop.len());
    next.push(pop[elite].clone());
    let c1 = cfg.p_crossover;
    let c2 = c1 + cfg.p_subtree;
    let c3 = c2 + cfg.p_hoist;
    let c4 = c3 + cfg.p_point;
    while next.len() < pop.len() {
        let parent = &pop[tournament(&scores, cfg.tournament, rng)];
        let r: f64 = rng.random();
        let child = if r < c1 {
            let donor = &pop[tournament(&scores, cfg.tournament, rng)];
            crossover(parent, donor, rng)
        } else if r < c2 {
            subtree_mutation(parent, role, cfg, rng)
        } else if r < c3 {
            hoist_mutation(parent, rng)
        } else if r < c4 {
            point_mutation(parent, role, cfg, rng)
        } else {
            parent.clone()
        };
        next.push(if child.size() > cfg.max_size { parent.clone() } else { child });
    }
    Ok(next)
}
