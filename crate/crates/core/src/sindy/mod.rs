//! Sparse-regression baselines: five-point derivatives, a library of
//! candidate terms aggregated over neighbours, STLSQ, and the two-phase
//! variant that refits after pruning small coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::expr::{parse, BinaryOp, Expr, Var};
use crate::gp::Role;
use crate::graph::Graph;

/// First derivative of every series in `traj` by the five-point stencil,
/// with fourth-order one-sided stencils at the two points nearest each end.
/// Layout matches [`Trajectory::states`].
pub fn five_point_derivative(traj: &Trajectory) -> Result<Vec<f64>> {
    let times = traj.times();
    let h = regular_step(times)?;
    let width = traj.n_nodes() * traj.dim();
    let nt = times.len();
    let states = traj.states();
    let mut out = vec![0.0; states.len()];
    let mut series = vec![0.0; nt];
    for c in 0..width {
        for k in 0..nt {
            series[k] = states[k * width + c];
        }
        let d = five_point(&series, h);
        for k in 0..nt {
            out[k * width + c] = d[k];
        }
    }
    Ok(out)
}

/// Spacing of a regular grid of at least five points.
pub fn regular_step(times: &[f64]) -> Result<f64> {
    if times.len() < 5 {
        return Err(Error::invalid(format!("five-point stencil needs at least 5 samples, got {}", times.len())));
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::invalid("timestamps must increase"));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-6 * h {
            return Err(Error::invalid(format!("irregular spacing {} vs {h}", w[1] - w[0])));
        }
    }
    Ok(h)
}

/// Five-point derivative of one regularly sampled series (`f.len() >= 5`).
pub fn five_point(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "five-point stencil needs 5 samples");
    let mut d = vec![0.0; n];
    let s = 12.0 * h;
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / s;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / s;
    for k in 2..n - 2 {
        d[k] = (-f[k + 2] + 8.0 * f[k + 1] - 8.0 * f[k - 1] + f[k - 2]) / s;
    }
    let m = n - 1;
    d[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4]) / s;
    d[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) / s;
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryColumn {
    pub role: Role,
    pub expr: Expr,
}

impl LibraryColumn {
    pub fn name(&self) -> String {
        match self.role {
            Role::Node => self.expr.to_string(),
            Role::Edge => format!("sum[{}]", self.expr),
        }
    }
}

/// Node terms evaluated at `x_i`, edge terms summed over neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionLibrary {
    pub columns: Vec<LibraryColumn>,
}

const BASIC_NODE: &[&str] = &["1", "x_i", "x_i^2", "x_i^3", "sin(x_i)", "cos(x_i)"];
const BASIC_EDGE: &[&str] = &["x_j", "x_i*x_j", "x_j^2", "x_i*x_j^2", "x_i^2*x_j", "sin(x_j)", "cos(x_j)", "sin(x_i - x_j)", "cos(x_i - x_j)"];
const EXTRA_NODE: &[&str] = &["exp(x_i)"];
const EXTRA_EDGE: &[&str] = &["x_j - x_i", "x_j - x_i^2", "sigmoid(x_j)", "sigmoid(x_j - x_i)"];

impl FunctionLibrary {
    pub fn from_formulas<S: AsRef<str>>(node: &[S], edge: &[S]) -> Result<FunctionLibrary> {
        let mut columns = Vec::new();
        for (role, list) in [(Role::Node, node), (Role::Edge, edge)] {
            for f in list {
                let expr = parse(f.as_ref())?;
                if !role.admits(&expr) || expr.uses(Var::T) {
                    return Err(Error::invalid(format!("`{}` is not a valid {role:?} term", f.as_ref())));
                }
                columns.push(LibraryColumn { role, expr });
            }
        }
        if columns.is_empty() {
            return Err(Error::invalid("empty function library"));
        }
        Ok(FunctionLibrary { columns })
    }

    /// Polynomials to degree three plus sines and cosines.
    pub fn basic() -> FunctionLibrary {
        FunctionLibrary::from_formulas(BASIC_NODE, BASIC_EDGE).expect("built-in library parses")
    }

    /// [`FunctionLibrary::basic`] plus exponential, difference and sigmoid terms.
    pub fn extended() -> FunctionLibrary {
        let node: Vec<&str> = BASIC_NODE.iter().chain(EXTRA_NODE).copied().collect();
        let edge: Vec<&str> = BASIC_EDGE.iter().chain(EXTRA_EDGE).copied().collect();
        FunctionLibrary::from_formulas(&node, &edge).expect("built-in library parses")
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(LibraryColumn::name).collect()
    }

    pub fn formulas(&self, role: Role) -> Vec<String> {
        self.columns.iter().filter(|c| c.role == role).map(|c| c.expr.to_string()).collect()
    }
}

/// Design matrix with one row per `(timestamp, node)` in trajectory order.
pub fn build_design(traj: &Trajectory, graph: &Graph, lib: &FunctionLibrary) -> Result<DMatrix<f64>> {
    if traj.dim() != 1 {
        return Err(Error::invalid("sparse regression supports scalar node states only"));
    }
    let n = graph.n_nodes();
    if traj.n_nodes() != n {
        return Err(Error::Shape(format!("trajectory has {} nodes, graph {n}", traj.n_nodes())));
    }
    let rows = traj.n_times() * n;
    let mut m = DMatrix::zeros(rows, lib.len());
    for k in 0..traj.n_times() {
        let x = traj.state(k);
        for v in 0..n {
            let row = k * n + v;
            for (c, col) in lib.columns.iter().enumerate() {
                let val = match col.role {
                    Role::Node => col.expr.eval(x[v], None, 0.0)?,
                    Role::Edge => {
                        let mut acc = 0.0;
                        for &(u, w) in graph.neighbors(v) {
                            acc += w * col.expr.eval(x[v], Some(x[u]), 0.0)?;
                        }
                        acc
                    }
                };
                m[(row, c)] = val;
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StlsqOutcome {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Some refit was rank deficient and used the minimum-norm solution.
    pub min_norm: bool,
    /// Thresholding removed every column.
    pub empty: bool,
    /// Root mean squared residual of the final fit.
    pub residual_rms: f64,
}

impl StlsqOutcome {
    pub fn support(&self) -> Vec<usize> {
        self.coefficients.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(k, _)| k).collect()
    }
}

/// Least squares on the columns in `support`; flags rank deficiency.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, support: &[usize]) -> (Vec<f64>, bool) {
    let sub = a.select_columns(support);
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * (a.nrows().max(support.len())) as f64;
    let rank = svd.rank(tol);
    let x = svd.solve(b, tol).expect("u and v were computed");
    (x.iter().copied().collect(), rank < support.len())
}

/// Sequentially thresholded least squares: fit, zero every coefficient below
/// `threshold` in magnitude, refit on the survivors, until the support stops
/// changing or `max_iters` refits have been done.
pub fn stlsq(design: &DMatrix<f64>, target: &[f64], threshold: f64, max_iters: usize) -> Result<StlsqOutcome> {
    if design.nrows() != target.len() {
        return Err(Error::Shape(format!("{} rows with {} targets", design.nrows(), target.len())));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid("threshold must be non-negative"));
    }
    let p = design.ncols();
    let b = DVector::from_column_slice(target);
    let mut coef = vec![0.0; p];
    let mut support: Vec<usize> = (0..p).collect();
    let mut min_norm = false;
    let mut iterations = 0;
    while !support.is_empty() {
        let (x, deficient) = lstsq(design, &b, &support);
        min_norm |= deficient;
        iterations += 1;
        coef.iter_mut().for_each(|c| *c = 0.0);
        for (&j, &v) in support.iter().zip(&x) {
            coef[j] = v;
        }
        let next: Vec<usize> = support.iter().copied().filter(|&j| coef[j].abs() >= threshold).collect();
        let settled = next.len() == support.len();
        for &j in &support {
            if coef[j].abs() < threshold {
                coef[j] = 0.0;
            }
        }
        support = next;
        if settled || iterations >= max_iters.max(1) {
            break;
        }
    }
    let fitted = design * DVector::from_column_slice(&coef);
    let residual_rms = ((fitted - &b).norm_squared() / target.len().max(1) as f64).sqrt();
    Ok(StlsqOutcome { coefficients: coef, iterations, min_norm, empty: support.is_empty(), residual_rms })
}

/// A fitted sparse model expressed as node and edge formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub node: String,
    pub edge: String,
    pub min_norm: bool,
    pub residual_rms: f64,
}

impl SparseModel {
    pub fn node_expr(&self) -> Result<Expr> {
        Ok(parse(&self.node)?)
    }

    pub fn edge_expr(&self) -> Result<Expr> {
        Ok(parse(&self.edge)?)
    }
}

fn combine(lib: &FunctionLibrary, coef: &[f64], role: Role) -> Expr {
    let mut acc: Option<Expr> = None;
    for (col, &c) in lib.columns.iter().zip(coef) {
        if c == 0.0 || col.role != role {
            continue;
        }
        let term = match &col.expr {
            Expr::Const(v) => Expr::Const(c * v),
            e => Expr::binary(BinaryOp::Mul, Expr::Const(c), e.clone()),
        };
        acc = Some(match acc {
            None => term,
            Some(a) => Expr::binary(BinaryOp::Add, a, term),
        });
    }
    acc.unwrap_or(Expr::Const(0.0))
}

fn model(lib: &FunctionLibrary, fit: &StlsqOutcome) -> SparseModel {
    SparseModel {
        columns: lib.names(),
        coefficients: fit.coefficients.clone(),
        node: combine(lib, &fit.coefficients, Role::Node).to_string(),
        edge: combine(lib, &fit.coefficients, Role::Edge).to_string(),
        min_norm: fit.min_norm,
        residual_rms: fit.residual_rms,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindyConfig {
    pub node_terms: Vec<String>,
    pub edge_terms: Vec<String>,
    /// STLSQ threshold (first phase for the two-phase variant).
    pub lambda1: f64,
    /// Phase-two pruning cutoff on coefficient magnitude.
    pub cutoff: f64,
    /// Phase-two STLSQ threshold.
    pub lambda2: f64,
    pub max_iters: usize,
}

impl Default for SindyConfig {
    fn default() -> Self {
        let lib = FunctionLibrary::extended();
        SindyConfig {
            node_terms: lib.formulas(Role::Node),
            edge_terms: lib.formulas(Role::Edge),
            lambda1: 0.05,
            cutoff: 0.1,
            lambda2: 0.05,
            max_iters: 10,
        }
    }
}

impl SindyConfig {
    pub fn library(&self) -> Result<FunctionLibrary> {
        FunctionLibrary::from_formulas(&self.node_terms, &self.edge_terms)
    }
}

/// One STLSQ pass on five-point derivatives.
pub fn sindy(traj: &Trajectory, graph: &Graph, lib: &FunctionLibrary, threshold: f64, max_iters: usize) -> Result<SparseModel> {
    let dx = five_point_derivative(traj)?;
    let design = build_design(traj, graph, lib)?;
    let fit = stlsq(&design, &dx, threshold, max_iters)?;
    if fit.empty {
        return Err(Error::Training("no library term survived thresholding".into()));
    }
    Ok(model(lib, &fit))
}

/// Two-phase variant: STLSQ with `lambda1`, then drop survivors whose
/// magnitude is below `cutoff` and refit the rest by STLSQ with `lambda2`.
pub fn tp_sindy(traj: &Trajectory, graph: &Graph, lib: &FunctionLibrary, cfg: &SindyConfig) -> Result<SparseModel> {
    let dx = five_point_derivative(traj)?;
    let design = build_design(traj, graph, lib)?;
    let first = stlsq(&design, &dx, cfg.lambda1, cfg.max_iters)?;
    let keep: Vec<usize> = first.support().into_iter().filter(|&j| first.coefficients[j].abs() >= cfg.cutoff).collect();
    if keep.is_empty() {
        return Err(Error::Training("no library term survived the first phase".into()));
    }
    let sub = design.select_columns(&keep);
    let second = stlsq(&sub, &dx, cfg.lambda2, cfg.max_iters)?;
    if second.empty {
        return Err(Error::Training("no library term survived the second phase".into()));
    }
    let mut coef = vec![0.0; lib.len()];
    for (&j, &c) in keep.iter().zip(&second.coefficients) {
        coef[j] = c;
    }
    let fit = StlsqOutcome { coefficients: coef, min_norm: first.min_norm || second.min_norm, ..second };
    Ok(model(lib, &fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::regular_times;

    #[test]
    fn stencil_exact_on_low_degree() {
        let t = regular_times(0.0, 2.0, 21);
        let f: Vec<f64> = t.iter().map(|x| x * x * x - 2.0 * x).collect();
        let d = five_point(&f, 0.1);
        for (x, dv) in t.iter().zip(&d) {
            assert!((dv - (3.0 * x * x - 2.0)).abs() < 1e-10, "{x} {dv}");
        }
    }

    #[test]
    fn irregular_grid_rejected() {
        assert!(regular_step(&[0.0, 0.1, 0.2, 0.35, 0.4]).is_err());
        assert!(regular_step(&[0.0, 0.1, 0.2]).is_err());
    }

    #[test]
    fn threshold_above_every_coefficient_empties() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let b: Vec<f64> = (0..4).map(|r| 0.3 * a[(r, 0)] - 0.2 * a[(r, 1)]).collect();
        let out = stlsq(&a, &b, 1.0, 10).unwrap();
        assert!(out.empty);
        assert_eq!(out.coefficients, vec![0.0, 0.0]);
    }

    #[test]
    fn collinear_columns_fall_back_to_min_norm() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let out = stlsq(&a, &[2.0, 4.0, 6.0], 0.0, 5).unwrap();
        assert!(out.min_norm);
        assert!((out.coefficients[0] - 1.0).abs() < 1e-9 && (out.coefficients[1] - 1.0).abs() < 1e-9);
    }
}
