use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fitness::{FitnessTarget, PairOutcome, FAILURE_ERROR};
use super::{evolve_step, init_population, GpConfig, Role};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::expr::{canonicalize, refine_constants, EvalScratch, Expr, Inputs, Program};
use crate::graph::Graph;
use crate::pind::NeuralRefs;
use crate::rng::{derive_seed, rng};

/// Reference functions the populations are compared against.
pub trait References: Sync {
    fn node(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn edge(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>>;
}

impl References for NeuralRefs {
    fn node(&self, x: &[f64]) -> Result<Vec<f64>> {
        NeuralRefs::node(self, x)
    }

    fn edge(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
        NeuralRefs::edge(self, x_i, x_j)
    }
}

/// Closed-form references, e.g. the true terms of a benchmark system.
#[derive(Debug, Clone)]
pub struct TruthRefs {
    pub node: Expr,
    pub edge: Expr,
}

impl References for TruthRefs {
    fn node(&self, x: &[f64]) -> Result<Vec<f64>> {
        x.iter().map(|&v| self.node.eval(v, None, 0.0).map_err(Error::Eval)).collect()
    }

    fn edge(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
        x_i.iter()
            .zip(x_j)
            .map(|(&a, &b)| self.edge.eval(a, Some(b), 0.0).map_err(Error::Eval))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Evolve only the population farther from its reference.
    Coordinated,
    /// Evolve both populations every generation.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evolved {
    Node,
    Edge,
    Both,
}

impl Evolved {
    pub fn name(self) -> &'static str {
        match self {
            Evolved::Node => "F",
            Evolved::Edge => "G",
            Evolved::Both => "FG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evolved: Evolved,
    pub d_f: f64,
    pub d_g: f64,
    pub best_error: f64,
    pub best_f: String,
    pub best_g: String,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub node: Expr,
    pub edge: Expr,
    /// Trajectory error of `(node, edge)`.
    pub error: f64,
    /// The pair before constant refinement.
    pub raw_node: Expr,
    pub raw_edge: Expr,
    pub raw_error: f64,
    pub converged: bool,
    pub generations: usize,
    pub history: Vec<GenerationRecord>,
    /// Candidate fitness computations (one per population member evaluated).
    pub fitness_evaluations: u64,
    /// Pair simulations started during the generational loop.
    pub simulations: u64,
    pub cache_hits: u64,
    /// Simulations spent on the final pair selection and refinement.
    pub final_simulations: u64,
    pub wall_seconds: f64,
}

impl SearchResult {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("generation,evolved_population,d_F,d_G,best_error,best_F,best_G\n");
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},\"{}\",\"{}\"",
                r.generation,
                r.evolved.name(),
                r.d_f,
                r.d_g,
                r.best_error,
                r.best_f,
                r.best_g
            );
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "node": self.node.to_string(),
            "edge": self.edge.to_string(),
            "node_constants": self.node.constants(),
            "edge_constants": self.edge.constants(),
            "error": self.error,
            "raw_node": self.raw_node.to_string(),
            "raw_edge": self.raw_edge.to_string(),
            "raw_error": self.raw_error,
            "converged": self.converged,
            "generations": self.generations,
            "fitness_evaluations": self.fitness_evaluations,
            "simulations": self.simulations,
            "cache_hits": self.cache_hits,
            "final_simulations": self.final_simulations,
            "wall_seconds": self.wall_seconds,
        })
    }
}

/// `n` sample points for `role`, each coordinate uniform on `[lo, hi]`.
/// Node samples have no `x_j`.
pub fn sample_points(role: Role, range: (f64, f64), n: usize, seed: u64) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut r = rng(seed);
    let (lo, hi) = range;
    let draw = |r: &mut crate::rng::Rng| if hi > lo { r.random_range(lo..=hi) } else { lo };
    let xi: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
    let xj = match role {
        Role::Node => None,
        Role::Edge => Some((0..n).map(|_| draw(&mut r)).collect()),
    };
    (xi, xj)
}

fn reference_values(role: Role, refs: &dyn References, xi: &[f64], xj: Option<&[f64]>) -> Result<Vec<f64>> {
    match role {
        Role::Node => refs.node(xi),
        Role::Edge => refs.edge(xi, xj.ok_or_else(|| Error::invalid("edge samples need x_j"))?),
    }
}

fn member_distances(pop: &[Expr], xi: &[f64], xj: Option<&[f64]>, t: f64, reference: &[f64]) -> Vec<f64> {
    let mut scratch = EvalScratch::default();
    let mut out = vec![0.0; xi.len()];
    pop.iter()
        .map(|e| {
            let p = Program::compile(e);
            if p.eval_batch(&Inputs { x_i: xi, x_j: xj, t, params: &[] }, &mut out, &mut scratch).is_err() {
                return FAILURE_ERROR;
            }
            let d = out.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / xi.len().max(1) as f64;
            if d.is_finite() {
                d.min(FAILURE_ERROR)
            } else {
                FAILURE_ERROR
            }
        })
        .collect()
}

/// Mean over members of the mean absolute deviation from the reference on
/// `n_samples` points drawn uniformly from `range`. Members that cannot be
/// evaluated count as [`FAILURE_ERROR`].
pub fn population_distance(pop: &[Expr], role: Role, refs: &dyn References, range: (f64, f64), n_samples: usize, seed: u64) -> Result<f64> {
    if pop.is_empty() || n_samples == 0 {
        return Err(Error::invalid("distance needs members and samples"));
    }
    let (xi, xj) = sample_points(role, range, n_samples, seed);
    let reference = reference_values(role, refs, &xi, xj.as_deref())?;
    let d = member_distances(pop, &xi, xj.as_deref(), 0.0, &reference);
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

type PairKey = (String, String);

#[derive(Default)]
struct Counters {
    simulations: u64,
    hits: u64,
}

/// Per-member outcome of a BigK evaluation.
#[derive(Debug, Clone)]
struct Scored {
    fitness: f64,
    best_error: f64,
    best_partner: usize,
}

struct Population {
    role: Role,
    members: Vec<Expr>,
    /// Per member, minus the smallest pair error seen since the members last
    /// changed; orders partners best-first.
    rank: Option<Vec<f64>>,
}

struct Engine<'a> {
    cfg: &'a GpConfig,
    target: FitnessTarget,
    /// Separate memo per scored role: entries hold bounds relative to the
    /// scored candidate's own top K.
    cache: [HashMap<PairKey, PairOutcome>; 2],
    counters: Counters,
    counters_final: u64,
    fitness_evaluations: u64,
}

fn role_slot(role: Role) -> usize {
    match role {
        Role::Node => 0,
        Role::Edge => 1,
    }
}

/// Unique canonical forms in first-seen order with their member indices.
fn dedupe(members: &[Expr]) -> Vec<(String, Expr, Vec<usize>)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<(String, Expr, Vec<usize>)> = Vec::new();
    for (k, m) in members.iter().enumerate() {
        let c = canonicalize(m);
        let key = c.to_string();
        match index.get(&key) {
            Some(&u) => out[u].2.push(k),
            None => {
                index.insert(key.clone(), out.len());
                out.push((key, c, vec![k]));
            }
        }
    }
    out
}

/// Insert `count` copies of `e` into the ascending list, keeping at most `k`.
fn push_top_k(top: &mut Vec<f64>, e: f64, count: usize, k: usize) {
    let at = top.partition_point(|&v| v <= e);
    for _ in 0..count {
        top.insert(at, e);
    }
    top.truncate(k);
}

impl Engine<'_> {
    /// BigK fitness of every member of `pop` against `partners`.
    /// Also records the best error seen per partner into `partners.rank`.
    fn evaluate(&mut self, pop: &Population, partners: &mut Population, partner_rank: &[f64]) -> Vec<Scored> {
        let cands = dedupe(&pop.members);
        let mut parts = dedupe(&partners.members);
        parts.sort_by(|a, b| {
            let ra = a.2.iter().map(|&k| partner_rank[k]).fold(f64::NEG_INFINITY, f64::max);
            let rb = b.2.iter().map(|&k| partner_rank[k]).fold(f64::NEG_INFINITY, f64::max);
            rb.total_cmp(&ra)
        });
        let part_progs: Vec<Program> = parts.iter().map(|p| Program::compile(&p.1)).collect();
        let slot = role_slot(pop.role);
        let cache = &self.cache[slot];
        let target = &self.target;
        let k = self.cfg.k;
        let early = self.cfg.early_abort;
        let use_cache = self.cfg.cache;
        let node_role = pop.role == Role::Node;

        type Row = (Scored, Vec<(PairKey, PairOutcome)>, Counters, Vec<f64>);
        let results: Vec<Row> = cands
            .par_iter()
            .map(|(ckey, cexpr, _)| {
                let prog = Program::compile(cexpr);
                let mut top: Vec<f64> = Vec::with_capacity(k);
                let mut fresh = Vec::new();
                let mut counters = Counters::default();
                let mut best = (f64::INFINITY, 0usize);
                let mut seen = vec![f64::INFINITY; parts.len()];
                for (pi, (pkey, _, mult)) in parts.iter().enumerate() {
                    let threshold = if early && top.len() >= k { top[k - 1] } else { f64::INFINITY };
                    let key = if node_role { (ckey.clone(), pkey.clone()) } else { (pkey.clone(), ckey.clone()) };
                    let cached = if use_cache { cache.get(&key).copied() } else { None };
                    let outcome = match cached {
                        Some(o) if o.exact().is_some() || o.lower_bound() >= threshold => {
                            counters.hits += 1;
                            o
                        }
                        _ => {
                            counters.simulations += 1;
                            let o = if node_role {
                                target.error_bounded(&prog, &part_progs[pi], threshold)
                            } else {
                                target.error_bounded(&part_progs[pi], &prog, threshold)
                            };
                            fresh.push((key, o));
                            o
                        }
                    };
                    if let Some(e) = outcome.exact() {
                        seen[pi] = e;
                        if e < best.0 {
                            best = (e, mult[0]);
                        }
                        if e < threshold {
                            push_top_k(&mut top, e, mult.len(), k);
                        }
                    }
                }
                let fitness = -top.iter().sum::<f64>() / top.len().max(1) as f64;
                (Scored { fitness, best_error: best.0, best_partner: best.1 }, fresh, counters, seen)
            })
            .collect();

        let mut scored = vec![Scored { fitness: -FAILURE_ERROR, best_error: FAILURE_ERROR, best_partner: 0 }; pop.members.len()];
        let mut partner_best = vec![f64::INFINITY; parts.len()];
        for ((_, _, members), (s, fresh, c, seen)) in cands.iter().zip(results) {
            for (b, e) in partner_best.iter_mut().zip(seen) {
                *b = b.min(e);
            }
            self.counters.simulations += c.simulations;
            self.counters.hits += c.hits;
            if self.cfg.cache {
                for (key, o) in fresh {
                    self.cache[slot].insert(key, o);
                }
            }
            for &m in members {
                scored[m] = s.clone();
            }
        }
        let mut rank = vec![f64::NEG_INFINITY; partners.members.len()];
        for ((_, _, members), b) in parts.iter().zip(partner_best) {
            for &m in members {
                rank[m] = -b;
            }
        }
        partners.rank = Some(rank);
        self.fitness_evaluations += pop.members.len() as u64;
        scored
    }

    /// Lowest-error pair across the two populations.
    fn best_pair(&mut self, nodes: &[Expr], edges: &[Expr]) -> (Expr, Expr, f64) {
        let fs = dedupe(nodes);
        let gs = dedupe(edges);
        let g_progs: Vec<Program> = gs.iter().map(|g| Program::compile(&g.1)).collect();
        let target = &self.target;
        let caches = &self.cache;
        let per_f: Vec<(f64, usize, u64)> = fs
            .par_iter()
            .map(|(fkey, fexpr, _)| {
                let prog = Program::compile(fexpr);
                let mut best = (f64::INFINITY, 0usize);
                let mut sims = 0;
                for (gi, (gkey, _, _)) in gs.iter().enumerate() {
                    let key = (fkey.clone(), gkey.clone());
                    let known = caches.iter().find_map(|c| c.get(&key).copied());
                    let o = match known {
                        Some(o) if o.exact().is_some() || o.lower_bound() >= best.0 => o,
                        _ => {
                            sims += 1;
                            target.error_bounded(&prog, &g_progs[gi], best.0)
                        }
                    };
                    if let Some(e) = o.exact() {
                        if e < best.0 {
                            best = (e, gi);
                        }
                    }
                }
                (best.0, best.1, sims)
            })
            .collect();
        self.counters_final += per_f.iter().map(|p| p.2).sum::<u64>();
        let (fi, &(err, gi, _)) = per_f
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("populations are nonempty");
        (fs[fi].1.clone(), gs[gi].1.clone(), err)
    }
}

/// Two-population symbolic search. Each generation compares each population
/// with its reference; in coordinated mode only the farther one is scored
/// and evolved while the other is frozen, in joint mode both are. Stops once
/// any scored member has a partner with error at most `cfg.epsilon`.
pub fn coordinated_search(refs: &dyn References, target: &Trajectory, graph: &Graph, cfg: &GpConfig) -> Result<SearchResult> {
    coordinated_search_seeded(refs, target, graph, cfg, &[], &[])
}

/// As [`coordinated_search`], with the given expressions placed at the front
/// of the initial node and edge populations.
pub fn coordinated_search_seeded(
    refs: &dyn References,
    target: &Trajectory,
    graph: &Graph,
    cfg: &GpConfig,
    seed_nodes: &[Expr],
    seed_edges: &[Expr],
) -> Result<SearchResult> {
    cfg.validate()?;
    if seed_nodes.iter().any(|e| !Role::Node.admits(e)) {
        return Err(Error::invalid("seeded node expressions may not use x_j"));
    }
    let start = Instant::now();
    let mut engine = Engine {
        cfg,
        target: FitnessTarget::new(graph, target, cfg.fitness_substeps, cfg.fitness_stride)?,
        cache: [HashMap::new(), HashMap::new()],
        counters: Counters::default(),
        fitness_evaluations: 0,
        counters_final: 0,
    };
    let t0 = engine.target.times()[0];
    let range = engine.target.state_range();

    let mut rng_f = rng(derive_seed(cfg.seed, "gp-node"));
    let mut rng_g = rng(derive_seed(cfg.seed, "gp-edge"));
    let mut fpop = Population { role: Role::Node, members: init_population(Role::Node, cfg, &mut rng_f), rank: None };
    let mut gpop = Population { role: Role::Edge, members: init_population(Role::Edge, cfg, &mut rng_g), rank: None };
    for (slot, e) in fpop.members.iter_mut().zip(seed_nodes) {
        *slot = e.clone();
    }
    for (slot, e) in gpop.members.iter_mut().zip(seed_edges) {
        *slot = e.clone();
    }

    let (fxi, _) = sample_points(Role::Node, range, cfg.distance_samples, derive_seed(cfg.seed, "gp-dist-node"));
    let (gxi, gxj) = sample_points(Role::Edge, range, cfg.distance_samples, derive_seed(cfg.seed, "gp-dist-edge"));
    let f_ref = reference_values(Role::Node, refs, &fxi, None)?;
    let g_ref = reference_values(Role::Edge, refs, &gxi, gxj.as_deref())?;

    let mut history = Vec::new();
    let mut converged = false;
    let mut generations = 0;
    for generation in 1..=cfg.generations {
        generations = generation;
        let fd = member_distances(&fpop.members, &fxi, None, t0, &f_ref);
        let gd = member_distances(&gpop.members, &gxi, gxj.as_deref(), t0, &g_ref);
        let d_f = fd.iter().sum::<f64>() / fd.len() as f64;
        let d_g = gd.iter().sum::<f64>() / gd.len() as f64;
        let rank = |p: &Population, d: &[f64]| -> Vec<f64> { p.rank.clone().unwrap_or_else(|| d.iter().map(|v| -v).collect()) };
        let evolved = match cfg.mode {
            SearchMode::Joint => Evolved::Both,
            SearchMode::Coordinated if d_f > d_g => Evolved::Node,
            SearchMode::Coordinated => Evolved::Edge,
        };
        let f_scores = if matches!(evolved, Evolved::Node | Evolved::Both) {
            let r = rank(&gpop, &gd);
            Some(engine.evaluate(&fpop, &mut gpop, &r))
        } else {
            None
        };
        let g_scores = if matches!(evolved, Evolved::Edge | Evolved::Both) {
            let r = rank(&fpop, &fd);
            Some(engine.evaluate(&gpop, &mut fpop, &r))
        } else {
            None
        };

        let mut best = (f64::INFINITY, String::new(), String::new());
        if let Some(s) = &f_scores {
            for (m, sc) in s.iter().enumerate() {
                if sc.best_error < best.0 {
                    best = (sc.best_error, fpop.members[m].to_string(), gpop.members[sc.best_partner].to_string());
                }
            }
        }
        if let Some(s) = &g_scores {
            for (m, sc) in s.iter().enumerate() {
                if sc.best_error < best.0 {
                    best = (sc.best_error, fpop.members[sc.best_partner].to_string(), gpop.members[m].to_string());
                }
            }
        }
        history.push(GenerationRecord { generation, evolved, d_f, d_g, best_error: best.0, best_f: best.1, best_g: best.2 });
        if best.0 <= cfg.epsilon {
            converged = true;
            break;
        }
        if let Some(s) = f_scores {
            let raw: Vec<f64> = s.iter().map(|x| x.fitness).collect();
            fpop.members = evolve_step(&fpop.members, &raw, Role::Node, cfg, &mut rng_f)?;
            fpop.rank = None;
        }
        if let Some(s) = g_scores {
            let raw: Vec<f64> = s.iter().map(|x| x.fitness).collect();
            gpop.members = evolve_step(&gpop.members, &raw, Role::Edge, cfg, &mut rng_g)?;
            gpop.rank = None;
        }
    }

    let (raw_node, raw_edge, raw_error) = engine.best_pair(&fpop.members, &gpop.members);
    let (mut node, mut edge, mut error) = (raw_node.clone(), raw_edge.clone(), raw_error);
    if cfg.refine_budget > 0 && raw_error < FAILURE_ERROR {
        let target = &engine.target;
        let mut sims = 0u64;
        let g_prog = Program::compile(&edge);
        let r = refine_constants(
            &node,
            |f| {
                sims += 1;
                target.error(&Program::compile(f), &g_prog)
            },
            cfg.refine_budget,
        );
        node = r.expr;
        let f_prog = Program::compile(&node);
        let r = refine_constants(
            &edge,
            |g| {
                sims += 1;
                target.error(&f_prog, &Program::compile(g))
            },
            cfg.refine_budget,
        );
        edge = r.expr;
        error = r.objective;
        engine.counters_final += sims;
    }

    Ok(SearchResult {
        node,
        edge,
        error,
        raw_node,
        raw_edge,
        raw_error,
        converged,
        generations,
        history,
        fitness_evaluations: engine.fitness_evaluations,
        simulations: engine.counters.simulations,
        cache_hits: engine.counters.hits,
        final_simulations: engine.counters_final,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn top_k_keeps_smallest_with_multiplicity() {
        let mut top = Vec::new();
        push_top_k(&mut top, 3.0, 1, 3);
        push_top_k(&mut top, 1.0, 2, 3);
        assert_eq!(top, vec![1.0, 1.0, 3.0]);
        push_top_k(&mut top, 5.0, 1, 3);
        assert_eq!(top, vec![1.0, 1.0, 3.0]);
        push_top_k(&mut top, 2.0, 1, 3);
        assert_eq!(top, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn distance_of_exact_copies_is_zero() {
        let refs = TruthRefs { node: parse("0.5 * x_i").unwrap(), edge: parse("sin(x_i - x_j)").unwrap() };
        let pop = vec![parse("sin(x_i - x_j)").unwrap(); 4];
        assert_eq!(population_distance(&pop, Role::Edge, &refs, (0.0, 1.0), 50, 1).unwrap(), 0.0);
        let pop = vec![parse("x_i / 0.5 * 0.25").unwrap()];
        assert!(population_distance(&pop, Role::Node, &refs, (0.0, 1.0), 50, 1).unwrap() < 1e-12);
    }

    #[test]
    fn dedupe_groups_canonical_twins() {
        let m = vec![parse("x_i + 1").unwrap(), parse("1 + x_i").unwrap(), parse("x_i").unwrap()];
        let d = dedupe(&m);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].2, vec![0, 1]);
    }
}
