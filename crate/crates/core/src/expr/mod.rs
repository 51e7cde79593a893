//! Expression trees for candidate node and edge dynamics.
//!
//! Formulas range over the receiving node state `x_i`, the neighbor state
//! `x_j` and time `t`. Division and exponentials are protected so that
//! evaluation stays finite on any input the search can produce.

mod canon;
mod fit;
mod parse;
mod program;
mod refine;
mod skeleton;

use std::fmt;

use thiserror::Error;

pub use canon::canonicalize;
pub use fit::{fit_params, FitOutcome};
pub use parse::{parse, ParseError};
pub use program::{EvalScratch, Inputs, Program};
pub use refine::{refine_constants, RefineOutcome};
pub use skeleton::{skeleton_equiv, skeleton_equiv_with, EquivConfig, EquivStage, Skeleton};

/// |denominator| below this makes `÷` return 1.
pub const DIV_GUARD: f64 = 1e-9;
/// Arguments of `exp` (and the exponential inside `sigmoid`) are clamped to ±this.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Var {
    Xi,
    Xj,
    T,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Xi => "x_i",
            Var::Xj => "x_j",
            Var::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sigmoid,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => protected_exp(a),
            UnaryOp::Sigmoid => sigmoid(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => protected_div(a, b),
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[inline]
pub fn protected_div(a: f64, b: f64) -> f64 {
    if b.abs() < DIV_GUARD {
        1.0
    } else {
        a / b
    }
}

#[inline]
pub fn protected_exp(a: f64) -> f64 {
    a.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + protected_exp(-a))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Indexed placeholder; only appears in skeletons.
    Param(usize),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable {0} is not bound")]
    Unbound(&'static str),
    #[error("placeholder c{0} has no value")]
    UnboundParam(usize),
    #[error("evaluation produced a non-finite value")]
    NonFinite,
}

/// Values for the variables of a single evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bindings<'a> {
    pub x_i: f64,
    pub x_j: Option<f64>,
    pub t: f64,
    pub params: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn node(x_i: f64) -> Self {
        Bindings { x_i, x_j: None, t: 0.0, params: &[] }
    }

    pub fn edge(x_i: f64, x_j: f64) -> Self {
        Bindings { x_i, x_j: Some(x_j), t: 0.0, params: &[] }
    }

    pub fn at(self, t: f64) -> Self {
        Bindings { t, ..self }
    }

    pub fn with_params(self, params: &'a [f64]) -> Self {
        Bindings { params, ..self }
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Evaluate at `x_i`, optional `x_j`, and time `t`.
    pub fn eval(&self, x_i: f64, x_j: Option<f64>, t: f64) -> Result<f64, EvalError> {
        self.eval_with(&Bindings { x_i, x_j, t, params: &[] })
    }

    pub fn eval_with(&self, b: &Bindings<'_>) -> Result<f64, EvalError> {
        let v = self.eval_raw(b)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_raw(&self, b: &Bindings<'_>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Param(k) => *b.params.get(*k).ok_or(EvalError::UnboundParam(*k))?,
            Expr::Var(Var::Xi) => b.x_i,
            Expr::Var(Var::Xj) => b.x_j.ok_or(EvalError::Unbound("x_j"))?,
            Expr::Var(Var::T) => b.t,
            Expr::Unary(op, a) => op.apply(a.eval_raw(b)?),
            Expr::Binary(op, l, r) => op.apply(l.eval_raw(b)?, r.eval_raw(b)?),
        })
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Param(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, l, r) => 1 + l.size() + r.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Param(_) | Expr::Var(_) => 0,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Var(v) => *v == var,
            Expr::Const(_) | Expr::Param(_) => false,
            Expr::Unary(_, a) => a.uses(var),
            Expr::Binary(_, l, r) => l.uses(var) || r.uses(var),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        [Var::Xi, Var::Xj, Var::T].into_iter().filter(|&v| self.uses(v)).collect()
    }

    /// Constant leaves in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Const(c) = e {
                out.push(*c);
            }
        });
        out
    }

    /// Overwrite constant leaves in pre-order. `values` must have one entry per constant.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut out = self.clone();
        let mut it = values.iter();
        out.visit_mut(&mut |e| {
            if let Expr::Const(c) = e {
                *c = *it.next().expect("one value per constant");
            }
        });
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Param(k) = e {
                n = n.max(k + 1);
            }
        });
        n
    }

    /// Swap `x_i` and `x_j`.
    pub fn swap_xi_xj(&self) -> Expr {
        let mut out = self.clone();
        out.visit_mut(&mut |e| {
            if let Expr::Var(v) = e {
                *v = match v {
                    Var::Xi => Var::Xj,
                    Var::Xj => Var::Xi,
                    Var::T => Var::T,
                };
            }
        });
        out
    }

    /// Pre-order visit.
    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }

    pub fn visit_mut<F: FnMut(&mut Expr)>(&mut self, f: &mut F) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit_mut(f),
            Expr::Binary(_, l, r) => {
                l.visit_mut(f);
                r.visit_mut(f);
            }
            _ => {}
        }
    }

    /// The `k`-th node in pre-order.
    pub fn subtree(&self, k: usize) -> Option<&Expr> {
        fn go<'a>(e: &'a Expr, k: &mut usize) -> Option<&'a Expr> {
            if *k == 0 {
                return Some(e);
            }
            *k -= 1;
            match e {
                Expr::Unary(_, a) => go(a, k),
                Expr::Binary(_, l, r) => go(l, k).or_else(|| go(r, k)),
                _ => None,
            }
        }
        let mut k = k;
        go(self, &mut k)
    }

    pub fn subtree_mut(&mut self, k: usize) -> Option<&mut Expr> {
        fn go<'a>(e: &'a mut Expr, k: &mut usize) -> Option<&'a mut Expr> {
            if *k == 0 {
                return Some(e);
            }
            *k -= 1;
            match e {
                Expr::Unary(_, a) => go(a, k),
                Expr::Binary(_, l, r) => {
                    let ls = l.size();
                    if *k < ls {
                        go(l, k)
                    } else {
                        *k -= ls;
                        go(r, k)
                    }
                }
                _ => None,
            }
        }
        let mut k = k;
        go(self, &mut k)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Param(_) | Expr::Var(_))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Unary(UnaryOp::Neg, _) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Param(k) => write!(f, "c{k}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Unary(UnaryOp::Neg, a) => {
                if matches!(**a, Expr::Const(_)) || a.precedence() < 3 {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn evaluates_benchmark_terms() {
        assert_eq!(p("sin(x_i - x_j)").eval(0.5, Some(0.5), 0.0).unwrap(), 0.0);
        let v = p("(1 - x_i)*x_j").eval(0.2, Some(0.5), 0.0).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(p("sigmoid(0)").eval(0.0, None, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn unbound_variables_are_reported() {
        assert_eq!(p("x_j + 1").eval(0.0, None, 0.0), Err(EvalError::Unbound("x_j")));
        assert_eq!(p("c0 * x_i").eval(1.0, None, 0.0), Err(EvalError::UnboundParam(0)));
    }

    #[test]
    fn protected_operators() {
        assert_eq!(p("x_i / 0").eval(3.0, None, 0.0).unwrap(), 1.0);
        assert_eq!(p("x_i / (x_i - x_i)").eval(3.0, None, 0.0).unwrap(), 1.0);
        assert_eq!(p("exp(1000)").eval(0.0, None, 0.0).unwrap(), EXP_CLAMP.exp());
        assert_eq!(p("sigmoid(-1000)").eval(0.0, None, 0.0).unwrap(), 1.0 / (1.0 + EXP_CLAMP.exp()));
        // overflow through repeated products is flagged, never returned as inf
        let big = p("exp(x_i)^16");
        assert_eq!(big.eval(100.0, None, 0.0), Err(EvalError::NonFinite));
    }

    #[test]
    fn subtree_indexing_is_preorder() {
        let e = p("sin(x_i) + 2 * x_j");
        assert_eq!(e.size(), 6);
        assert_eq!(e.subtree(1).unwrap(), &p("sin(x_i)"));
        assert_eq!(e.subtree(3).unwrap(), &p("2 * x_j"));
        assert_eq!(e.subtree(5).unwrap(), &p("x_j"));
        let mut m = e.clone();
        *m.subtree_mut(3).unwrap() = p("t");
        assert_eq!(m, p("sin(x_i) + t"));
        assert!(e.subtree(6).is_none());
    }

    #[test]
    fn constants_round_trip_through_setter() {
        let e = p("0.5 * x_i + sin(2 * x_j) - 3");
        assert_eq!(e.constants(), vec![0.5, 2.0, 3.0]);
        assert_eq!(e.with_constants(&[1.0, 1.0, 1.0]), p("1 * x_i + sin(1 * x_j) - 1"));
    }

    #[test]
    fn swapping_variables_swaps_arguments() {
        let e = p("x_i * (x_j - 0.3) + cos(x_i)");
        let s = e.swap_xi_xj();
        for &(a, b) in &[(0.1, 0.7), (-1.2, 2.5), (3.0, 0.0)] {
            assert_eq!(e.eval(a, Some(b), 0.0).unwrap(), s.eval(b, Some(a), 0.0).unwrap());
        }
    }
}
