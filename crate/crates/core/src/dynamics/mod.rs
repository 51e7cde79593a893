//! Ground-truth network dynamics `dx_v/dt = F(x_v) + sum_u a_vu G(x_v, x_u)`
//! for the benchmark systems, plus arbitrary symbolic pairs.

mod solver;
mod trajectory;

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use solver::{check_times, integrate, integrate_observed, Rhs, RhsError, SimError, SimOptions, Solver};
pub use trajectory::{add_noise, regular_times, sample_times, Provenance, Sampling, Trajectory};

use crate::error::{Error, Result};
use crate::expr::{self, EvalScratch, Expr, Inputs, Program, Var};
use crate::graph::{DirectedPairs, Graph};
use crate::rng;

/// The four benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Sis,
    Lv,
    Wc,
    Kur,
}

impl DynamicsKind {
    pub const ALL: [DynamicsKind; 4] = [DynamicsKind::Sis, DynamicsKind::Lv, DynamicsKind::Kur, DynamicsKind::Wc];

    pub fn name(self) -> &'static str {
        match self {
            DynamicsKind::Sis => "SIS",
            DynamicsKind::Lv => "LV",
            DynamicsKind::Wc => "WC",
            DynamicsKind::Kur => "KUR",
        }
    }

    /// Benchmark spec with the standard constants.
    pub fn spec(self) -> DynamicsSpec {
        match self {
            DynamicsKind::Sis => DynamicsSpec::Sis { delta: 0.5 },
            DynamicsKind::Lv => DynamicsSpec::Lv { alpha: 0.75, theta: 0.5 },
            DynamicsKind::Wc => DynamicsSpec::Wc { tau: 0.75, mu: 0.5, flipped: false },
            DynamicsKind::Kur => DynamicsSpec::Kur { omega: 0.75 },
        }
    }

    /// Range initial states are drawn from.
    pub fn initial_range(self) -> (f64, f64) {
        match self {
            DynamicsKind::Kur => (0.0, 2.0 * PI),
            _ => (0.0, 1.0),
        }
    }
}

impl std::str::FromStr for DynamicsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sis" => Ok(DynamicsKind::Sis),
            "lv" => Ok(DynamicsKind::Lv),
            "wc" => Ok(DynamicsKind::Wc),
            "kur" => Ok(DynamicsKind::Kur),
            _ => Err(Error::invalid(format!("unknown dynamics `{s}`"))),
        }
    }
}

impl std::fmt::Display for DynamicsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsSpec {
    /// `F = -delta x`, `G = (1 - x_i) x_j`.
    Sis { delta: f64 },
    /// `F = x (alpha - theta x)`, `G = -x_i x_j`.
    Lv { alpha: f64, theta: f64 },
    /// `F = -x`, `G = sigmoid(tau (x_j - mu))`; `flipped` negates `tau`.
    Wc { tau: f64, mu: f64, flipped: bool },
    /// `F = omega`, `G = sin(x_i - x_j)`.
    Kur { omega: f64 },
    Symbolic { node: Expr, edge: Expr },
}

impl DynamicsSpec {
    /// Validates that a symbolic pair only uses the variables it may.
    pub fn symbolic(node: Expr, edge: Expr) -> Result<DynamicsSpec> {
        if node.uses(Var::Xj) {
            return Err(Error::invalid("node term may not reference x_j"));
        }
        if node.n_params() > 0 || edge.n_params() > 0 {
            return Err(Error::invalid("dynamics may not contain unbound placeholders"));
        }
        Ok(DynamicsSpec::Symbolic { node, edge })
    }

    pub fn kind(&self) -> Option<DynamicsKind> {
        match self {
            DynamicsSpec::Sis { .. } => Some(DynamicsKind::Sis),
            DynamicsSpec::Lv { .. } => Some(DynamicsKind::Lv),
            DynamicsSpec::Wc { .. } => Some(DynamicsKind::Wc),
            DynamicsSpec::Kur { .. } => Some(DynamicsKind::Kur),
            DynamicsSpec::Symbolic { .. } => None,
        }
    }

    /// The `(F, G)` formulas as expression trees.
    pub fn exprs(&self) -> (Expr, Expr) {
        let p = |s: String| expr::parse(&s).expect("built-in formula parses");
        match self {
            DynamicsSpec::Sis { delta } => (p(format!("-({delta:?})*x_i")), p("(1 - x_i)*x_j".into())),
            DynamicsSpec::Lv { alpha, theta } => {
                (p(format!("x_i*({alpha:?} - ({theta:?})*x_i)")), p("-x_i*x_j".into()))
            }
            DynamicsSpec::Wc { tau, mu, flipped } => {
                let tau = if *flipped { -tau } else { *tau };
                (p("-x_i".into()), p(format!("sigmoid(({tau:?})*(x_j - ({mu:?})))")))
            }
            DynamicsSpec::Kur { omega } => (p(format!("{omega:?}")), p("sin(x_i - x_j)".into())),
            DynamicsSpec::Symbolic { node, edge } => (node.clone(), edge.clone()),
        }
    }

    /// The symbolic twin of this spec.
    pub fn to_symbolic(&self) -> DynamicsSpec {
        let (node, edge) = self.exprs();
        DynamicsSpec::Symbolic { node, edge }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            DynamicsSpec::Sis { delta } => delta.is_finite(),
            DynamicsSpec::Lv { alpha, theta } => alpha.is_finite() && theta.is_finite(),
            DynamicsSpec::Wc { tau, mu, .. } => tau.is_finite() && mu.is_finite(),
            DynamicsSpec::Kur { omega } => omega.is_finite(),
            DynamicsSpec::Symbolic { node, .. } => !node.uses(Var::Xj),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("invalid dynamics parameters"))
        }
    }
}

/// Draw initial states for `kind` on `n` nodes.
pub fn sample_initial(kind: DynamicsKind, n: usize, seed: u64) -> Vec<f64> {
    let (lo, hi) = kind.initial_range();
    let mut r = rng::rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Vectorised right-hand side for a graph and a set of node/edge programs.
pub struct NetworkRhs {
    kind: Kernel,
    pairs: DirectedPairs,
    n: usize,
    xi_e: Vec<f64>,
    xj_e: Vec<f64>,
    g: Vec<f64>,
    scratch: EvalScratch,
}

enum Kernel {
    Builtin(DynamicsSpec),
    Programs { node: Program, edge: Program },
}

impl NetworkRhs {
    pub fn new(spec: &DynamicsSpec, graph: &Graph) -> Result<NetworkRhs> {
        spec.validate()?;
        let kind = match spec {
            DynamicsSpec::Symbolic { node, edge } => Kernel::Programs { node: Program::compile(node), edge: Program::compile(edge) },
            other => Kernel::Builtin(other.clone()),
        };
        let pairs = graph.directed_pairs();
        let m = pairs.receiver.len();
        Ok(NetworkRhs {
            kind,
            pairs,
            n: graph.n_nodes(),
            xi_e: vec![0.0; m],
            xj_e: vec![0.0; m],
            g: vec![0.0; m],
            scratch: EvalScratch::default(),
        })
    }
}

impl Rhs for NetworkRhs {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> std::result::Result<(), RhsError> {
        let p = &self.pairs;
        for (k, (&r, &s)) in p.receiver.iter().zip(&p.sender).enumerate() {
            self.xi_e[k] = x[r];
            self.xj_e[k] = x[s];
        }
        match &self.kind {
            Kernel::Builtin(spec) => {
                match *spec {
                    DynamicsSpec::Sis { delta } => {
                        dx.iter_mut().zip(x).for_each(|(d, v)| *d = -delta * v);
                        for k in 0..self.g.len() {
                            self.g[k] = (1.0 - self.xi_e[k]) * self.xj_e[k];
                        }
                    }
                    DynamicsSpec::Lv { alpha, theta } => {
                        dx.iter_mut().zip(x).for_each(|(d, v)| *d = v * (alpha - theta * v));
                        for k in 0..self.g.len() {
                            self.g[k] = -self.xi_e[k] * self.xj_e[k];
                        }
                    }
                    DynamicsSpec::Wc { tau, mu, flipped } => {
                        let tau = if flipped { -tau } else { tau };
                        dx.iter_mut().zip(x).for_each(|(d, v)| *d = -v);
                        for k in 0..self.g.len() {
                            self.g[k] = expr::sigmoid(tau * (self.xj_e[k] - mu));
                        }
                    }
                    DynamicsSpec::Kur { omega } => {
                        dx.fill(omega);
                        for k in 0..self.g.len() {
                            self.g[k] = (self.xi_e[k] - self.xj_e[k]).sin();
                        }
                    }
                    DynamicsSpec::Symbolic { .. } => unreachable!(),
                }
            }
            Kernel::Programs { node, edge } => {
                eval_programs(node, edge, p, t, x, dx, &self.xi_e, &self.xj_e, &mut self.g, &mut self.scratch)?;
            }
        }
        aggregate(p, &self.g, dx)
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_programs(
    node: &Program,
    edge: &Program,
    p: &DirectedPairs,
    t: f64,
    x: &[f64],
    dx: &mut [f64],
    xi_e: &[f64],
    xj_e: &[f64],
    g: &mut [f64],
    scratch: &mut EvalScratch,
) -> std::result::Result<(), RhsError> {
    let inputs = Inputs { x_i: x, x_j: None, t, params: &[] };
    if node.eval_batch(&inputs, dx, scratch).is_err() {
        let bad = node.first_bad_row(&inputs, scratch).unwrap_or(0);
        return Err(RhsError { node: bad, msg: "node term is not finite".into() });
    }
    if !p.receiver.is_empty() {
        let inputs = Inputs { x_i: xi_e, x_j: Some(xj_e), t, params: &[] };
        if edge.eval_batch(&inputs, g, scratch).is_err() {
            let bad = edge.first_bad_row(&inputs, scratch).map(|k| p.receiver[k]).unwrap_or(0);
            return Err(RhsError { node: bad, msg: "edge term is not finite".into() });
        }
    }
    Ok(())
}

fn aggregate(p: &DirectedPairs, g: &[f64], dx: &mut [f64]) -> std::result::Result<(), RhsError> {
    if p.unit_weights {
        for (k, &r) in p.receiver.iter().enumerate() {
            dx[r] += g[k];
        }
    } else {
        for (k, &r) in p.receiver.iter().enumerate() {
            dx[r] += p.weight[k] * g[k];
        }
    }
    if let Some(v) = dx.iter().position(|d| !d.is_finite()) {
        return Err(RhsError { node: v, msg: "derivative is not finite".into() });
    }
    Ok(())
}

/// Right-hand side borrowing compiled node and edge programs, for callers
/// that simulate many candidate pairs on one graph.
pub struct ProgramRhs<'a> {
    node: &'a Program,
    edge: &'a Program,
    pairs: &'a DirectedPairs,
    n: usize,
    xi_e: Vec<f64>,
    xj_e: Vec<f64>,
    g: Vec<f64>,
    scratch: EvalScratch,
}

impl<'a> ProgramRhs<'a> {
    pub fn new(node: &'a Program, edge: &'a Program, pairs: &'a DirectedPairs, n_nodes: usize) -> ProgramRhs<'a> {
        let m = pairs.receiver.len();
        ProgramRhs { node, edge, pairs, n: n_nodes, xi_e: vec![0.0; m], xj_e: vec![0.0; m], g: vec![0.0; m], scratch: EvalScratch::default() }
    }
}

impl Rhs for ProgramRhs<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> std::result::Result<(), RhsError> {
        let p = self.pairs;
        for (k, (&r, &s)) in p.receiver.iter().zip(&p.sender).enumerate() {
            self.xi_e[k] = x[r];
            self.xj_e[k] = x[s];
        }
        eval_programs(self.node, self.edge, p, t, x, dx, &self.xi_e, &self.xj_e, &mut self.g, &mut self.scratch)?;
        aggregate(p, &self.g, dx)
    }
}

/// `dx/dt` for every node at time 0.
pub fn eval_rhs(spec: &DynamicsSpec, graph: &Graph, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != graph.n_nodes() {
        return Err(Error::Shape(format!("{} states for {} nodes", state.len(), graph.n_nodes())));
    }
    let mut rhs = NetworkRhs::new(spec, graph)?;
    let mut dx = vec![0.0; state.len()];
    rhs.eval(0.0, state, &mut dx)
        .map_err(|e| SimError::Domain { node: e.node, time: 0.0, msg: e.msg })?;
    Ok(dx)
}

/// Integrate `spec` on `graph` from `x0` and sample at `times`.
pub fn simulate(spec: &DynamicsSpec, graph: &Graph, x0: &[f64], times: &[f64], opts: &SimOptions) -> Result<Trajectory> {
    let mut rhs = NetworkRhs::new(spec, graph)?;
    let states = integrate(&mut rhs, x0, times, opts)?;
    Trajectory::new(times.to_vec(), graph.n_nodes(), 1, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_ba, Edge};

    #[test]
    fn isolated_and_fixed_points() {
        let g = Graph::empty(1).unwrap();
        assert_eq!(eval_rhs(&DynamicsKind::Sis.spec(), &g, &[0.4]).unwrap(), vec![-0.2]);
        let g2 = Graph::new(2, [Edge { u: 0, v: 1, weight: 1.0 }]).unwrap();
        assert_eq!(eval_rhs(&DynamicsKind::Kur.spec(), &g2, &[1.3, 1.3]).unwrap(), vec![0.75, 0.75]);
        assert_eq!(eval_rhs(&DynamicsKind::Sis.spec(), &g2, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn flows_on_isolated_node() {
        let g = Graph::empty(1).unwrap();
        let tr = simulate(&DynamicsKind::Kur.spec(), &g, &[0.0], &[0.0, 0.5, 1.0], &SimOptions::default()).unwrap();
        for (a, b) in tr.states().iter().zip([0.0, 0.375, 0.75]) {
            assert!((a - b).abs() < 1e-14);
        }
        let tr = simulate(&DynamicsKind::Lv.spec(), &g, &[1.5], &regular_times(0.0, 1.0, 5), &SimOptions::default()).unwrap();
        assert!(tr.states().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn symbolic_twin_matches_builtin() {
        let g = gen_ba(30, 3, 1).unwrap();
        let x = sample_initial(DynamicsKind::Kur, 30, 2);
        for kind in DynamicsKind::ALL {
            let spec = kind.spec();
            let a = eval_rhs(&spec, &g, &x).unwrap();
            let b = eval_rhs(&spec.to_symbolic(), &g, &x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12, "{kind}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn symbolic_domain_error_names_node() {
        let g = Graph::empty(3).unwrap();
        let spec = DynamicsSpec::symbolic(expr::parse("exp(x_i)^16").unwrap(), Expr::Const(0.0)).unwrap();
        let err = eval_rhs(&spec, &g, &[0.0, 49.0, 0.0]).unwrap_err();
        match err {
            Error::Sim(SimError::Domain { node, .. }) => assert_eq!(node, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn node_term_may_not_use_xj() {
        assert!(DynamicsSpec::symbolic(expr::parse("x_j").unwrap(), Expr::Const(0.0)).is_err());
    }
}
