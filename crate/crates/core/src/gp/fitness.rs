use std::ops::ControlFlow;

use crate::dynamics::{integrate_observed, ProgramRhs, SimOptions, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{canonicalize, Expr, Program};
use crate::graph::{DirectedPairs, Graph};

/// Error assigned to pairs whose simulation fails, and the cap on any error.
pub const FAILURE_ERROR: f64 = 1e6;

/// Result of simulating one candidate pair against the target trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairOutcome {
    /// Mean squared error over all nodes and timestamps, capped at [`FAILURE_ERROR`].
    Exact(f64),
    /// The run was stopped early; the error is at least this.
    AtLeast(f64),
    Failed,
}

impl PairOutcome {
    /// The error if known exactly.
    pub fn exact(self) -> Option<f64> {
        match self {
            PairOutcome::Exact(e) => Some(e),
            PairOutcome::Failed => Some(FAILURE_ERROR),
            PairOutcome::AtLeast(_) => None,
        }
    }

    pub fn lower_bound(self) -> f64 {
        match self {
            PairOutcome::Exact(e) | PairOutcome::AtLeast(e) => e,
            PairOutcome::Failed => FAILURE_ERROR,
        }
    }
}

/// A trajectory to match plus the graph it lives on.
#[derive(Debug, Clone)]
pub struct FitnessTarget {
    pairs: DirectedPairs,
    n: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    opts: SimOptions,
}

impl FitnessTarget {
    /// Compare at every `stride`-th timestamp of `target` (always including
    /// the first), integrating with `substeps` RK4 steps between compared
    /// timestamps.
    pub fn new(graph: &Graph, target: &Trajectory, substeps: usize, stride: usize) -> Result<FitnessTarget> {
        if target.dim() != 1 {
            return Err(Error::invalid("symbolic search supports scalar node states only"));
        }
        if target.n_nodes() != graph.n_nodes() {
            return Err(Error::Shape(format!("trajectory has {} nodes, graph {}", target.n_nodes(), graph.n_nodes())));
        }
        if target.n_times() < 2 {
            return Err(Error::invalid("fitness needs at least two timestamps"));
        }
        if substeps == 0 || stride == 0 {
            return Err(Error::invalid("substeps and stride must be positive"));
        }
        let keep: Vec<usize> = (0..target.n_times()).step_by(stride).collect();
        if keep.len() < 2 {
            return Err(Error::invalid(format!("stride {stride} leaves fewer than two timestamps")));
        }
        Ok(FitnessTarget {
            pairs: graph.directed_pairs(),
            n: graph.n_nodes(),
            times: keep.iter().map(|&k| target.times()[k]).collect(),
            states: keep.iter().flat_map(|&k| target.state(k).iter().copied()).collect(),
            opts: SimOptions::rk4_substeps(substeps),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[..self.n]
    }

    /// Observed per-node range over the whole target.
    pub fn state_range(&self) -> (f64, f64) {
        let lo = self.states.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.states.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Simulate the pair from the target's first state. Stops as soon as the
    /// error is provably at least `abort_at`.
    pub fn error_bounded(&self, node: &Program, edge: &Program, abort_at: f64) -> PairOutcome {
        let mut rhs = ProgramRhs::new(node, edge, &self.pairs, self.n);
        let denom = (self.n * self.times.len()) as f64;
        let limit = abort_at.min(FAILURE_ERROR);
        let mut sse = 0.0;
        let mut stopped = false;
        let run = integrate_observed(&mut rhs, self.initial_state(), &self.times, &self.opts, |k, x| {
            let target = &self.states[k * self.n..(k + 1) * self.n];
            sse += x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if sse / denom >= limit {
                stopped = true;
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        let lb = sse / denom;
        match run {
            Err(_) => PairOutcome::Failed,
            Ok(_) if !lb.is_finite() || lb >= FAILURE_ERROR => PairOutcome::Exact(FAILURE_ERROR),
            Ok(_) if stopped => PairOutcome::AtLeast(lb),
            Ok(_) => PairOutcome::Exact(lb),
        }
    }

    /// Exact mean squared error of the pair.
    pub fn error(&self, node: &Program, edge: &Program) -> f64 {
        self.error_bounded(node, edge, f64::INFINITY).lower_bound()
    }
}

/// Negative trajectory error of `(node, edge)` against `target`: both terms
/// are canonicalized, integrated with RK4 from the target's first state and
/// compared at every timestamp. Failed simulations score `-FAILURE_ERROR`.
pub fn pair_fitness(node: &Expr, edge: &Expr, graph: &Graph, target: &Trajectory, substeps: usize) -> Result<f64> {
    let t = FitnessTarget::new(graph, target, substeps, 1)?;
    let f = Program::compile(&canonicalize(node));
    let g = Program::compile(&canonicalize(edge));
    Ok(-t.error(&f, &g))
}
