//! Skeletons (formulas with constants replaced by placeholders) and the
//! skeleton-equivalence check used to score recovery.

use std::fmt;

use rand::Rng as _;

use super::fit::{lm_fit, Samples};
use super::{canonicalize, Expr, Var};
use crate::rng;

/// Canonical tree whose constants are replaced by `c0, c1, ...` in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    tree: Expr,
    values: Vec<f64>,
}

impl Skeleton {
    pub fn of(e: &Expr) -> Skeleton {
        let mut tree = canonicalize(e);
        let mut values = Vec::new();
        tree.visit_mut(&mut |node| {
            if let Expr::Const(c) = node {
                values.push(*c);
                *node = Expr::Param(values.len() - 1);
            }
        });
        Skeleton { tree, values }
    }

    pub fn tree(&self) -> &Expr {
        &self.tree
    }

    /// The constants that were abstracted away, indexed like the placeholders.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn instantiate(&self, params: &[f64]) -> Expr {
        let mut out = self.tree.clone();
        out.visit_mut(&mut |node| {
            if let Expr::Param(k) = node {
                *node = Expr::Const(params[*k]);
            }
        });
        out
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tree.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivConfig {
    /// Sampling interval used for every variable.
    pub domain: (f64, f64),
    pub n_samples: usize,
    pub resamples: usize,
    /// Residual RMS relative to the RMS of the truth below which a fit counts as exact.
    pub rel_tol: f64,
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig { domain: (-2.0, 2.0), n_samples: 256, resamples: 3, rel_tol: 1e-6, random_starts: 4, seed: 0x5eed }
    }
}

/// Which stage (if any) established equivalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivStage {
    Structural,
    Numeric,
    NotEquivalent,
}

impl EquivStage {
    pub fn is_equivalent(self) -> bool {
        self != EquivStage::NotEquivalent
    }
}

/// Is the skeleton of `candidate` the skeleton of `truth`?
pub fn skeleton_equiv(candidate: &Expr, truth: &Expr) -> bool {
    skeleton_equiv_with(candidate, truth, &EquivConfig::default()).is_equivalent()
}

/// Two-stage check. Stage 1 compares canonical skeletons structurally.
/// Stage 2 fits the candidate's placeholders to the truth function on random
/// points; the candidate is equivalent when the fit is exact on every
/// resampling and no placeholder can be pinned to zero while staying exact
/// (a removable term means the candidate carries extra structure).
pub fn skeleton_equiv_with(candidate: &Expr, truth: &Expr, cfg: &EquivConfig) -> EquivStage {
    let cand = Skeleton::of(candidate);
    let truth_sk = Skeleton::of(truth);
    if cand.tree == truth_sk.tree {
        return EquivStage::Structural;
    }
    if numeric_equiv(&cand, truth, cfg) {
        EquivStage::Numeric
    } else {
        EquivStage::NotEquivalent
    }
}

fn numeric_equiv(cand: &Skeleton, truth: &Expr, cfg: &EquivConfig) -> bool {
    let uses_xj = cand.tree.uses(Var::Xj) || truth.uses(Var::Xj);
    let uses_t = cand.tree.uses(Var::T) || truth.uses(Var::T);
    let (lo, hi) = cfg.domain;
    let n = cfg.n_samples;
    let mut best: Option<Vec<f64>> = None;
    for round in 0..cfg.resamples.max(1) {
        let mut r = rng::rng(cfg.seed.wrapping_add(round as u64));
        let x_i: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
        let x_j: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
        let t = if uses_t { r.random_range(lo..hi) } else { 0.0 };
        let mut target = Vec::with_capacity(n);
        for k in 0..n {
            match truth.eval(x_i[k], uses_xj.then_some(x_j[k]), t) {
                Ok(v) => target.push(v),
                Err(_) => return false,
            }
        }
        let scale = (target.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        let samples = Samples { x_i: &x_i, x_j: uses_xj.then_some(&x_j[..]), t };
        let tol = cfg.rel_tol * scale;

        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(b) = &best {
            starts.push(b.clone());
        }
        starts.push(cand.values.clone());
        for _ in 0..cfg.random_starts {
            starts.push((0..cand.n_params()).map(|_| r.random_range(-2.0..2.0)).collect());
        }
        let mut found: Option<Vec<f64>> = None;
        for init in &starts {
            if let Some(fit) = lm_fit(&cand.tree, &samples, &target, init, &[], 200) {
                if fit.rms <= tol {
                    found = Some(fit.params);
                    break;
                }
            }
        }
        let Some(params) = found else { return false };

        if round == 0 {
            for k in 0..cand.n_params() {
                if let Some(fit) = lm_fit(&cand.tree, &samples, &target, &params, &[(k, 0.0)], 200) {
                    if fit.rms <= tol {
                        return false;
                    }
                }
            }
        }
        best = Some(params);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn eq(a: &str, b: &str) -> bool {
        skeleton_equiv(&parse(a).unwrap(), &parse(b).unwrap())
    }

    #[test]
    fn recovered_rows_are_equivalent() {
        assert!(eq("-0.48540*x_i", "-0.5*x_i"));
        assert!(eq("(0.99119 - 1.09637*x_i)*x_j", "(1 - x_i)*x_j"));
        assert!(eq("x_i*(0.75034 - 0.48812*x_i)", "x_i*(0.75 - 0.5*x_i)"));
        assert!(eq("-0.99428*x_i*x_j", "-x_i*x_j"));
        assert!(eq("0.75002", "0.75"));
        assert!(eq("sin(1.0001*x_i - x_j)", "sin(x_i - x_j)"));
        assert!(eq("0.99899*sin(x_i - x_j)", "sin(x_i - x_j)"));
        assert!(eq("sigmoid(-0.74503*(x_j - 0.49128))", "sigmoid(-0.75*(x_j - 0.5))"));
    }

    #[test]
    fn failed_rows_are_not_equivalent() {
        assert!(!eq("-0.47256*x_i*x_i - 0.12596", "-0.5*x_i"));
        assert!(!eq(
            "0.10860*sigmoid(x_j - x_i) + 0.18835*(x_j - x_i*x_i) + 0.19917*(x_j - x_i) + 0.35416*sin(x_j)",
            "(1 - x_i)*x_j"
        ));
        assert!(!eq("0.03984 + 0.36330*sin(x_i)", "x_i*(0.75 - 0.5*x_i)"));
        assert!(!eq("-0.945810*x_i*x_j - 0.11895*x_i*x_j*x_j", "-x_i*x_j"));
        assert!(!eq("0.08513*sigmoid(x_j - x_i) + 0.68484*sigmoid(x_j)", "sigmoid(-0.75*(x_j - 0.5))"));
    }

    #[test]
    fn expanded_forms_match_through_fitting() {
        assert_eq!(
            skeleton_equiv_with(&parse("x_j - 1.1*x_i*x_j").unwrap(), &parse("(1 - x_i)*x_j").unwrap(), &EquivConfig::default()),
            EquivStage::Numeric
        );
        assert!(eq("sigmoid(0.3*x_j + 0.1)", "sigmoid(0.75*(x_j - 0.5))"));
        assert!(eq("-sin(x_j - x_i)", "sin(x_i - x_j)"));
    }

    #[test]
    fn extra_terms_are_rejected() {
        assert!(!eq("0.2 - 0.5*x_i", "-0.5*x_i"));
        assert!(!eq("-0.5*x_i + 0.01*sin(x_i)", "-0.5*x_i"));
        assert!(!eq("0.4 + 0.2*x_j", "sigmoid(0.75*(x_j - 0.5))"));
        assert!(!eq("x_i", "-0.5*x_i"));
    }

    #[test]
    fn skeleton_is_canonical_fixed_point() {
        for s in ["0.3*x_i - sin(2*x_j + 1)", "(1 - x_i)*x_j", "x_i / (0.5 + x_j) - 3"] {
            let sk = Skeleton::of(&parse(s).unwrap());
            assert_eq!(canonicalize(sk.tree()), *sk.tree(), "{s}");
            assert_eq!(Skeleton::of(sk.tree()).tree(), sk.tree());
        }
    }
}
