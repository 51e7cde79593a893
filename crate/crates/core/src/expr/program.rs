//! Postfix compilation of expression trees for batched evaluation over all
//! nodes or all edges at once.

use super::{BinaryOp, EvalError, Expr, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Const(f64),
    Param(usize),
    Var(Var),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    code: Vec<Instr>,
    max_stack: usize,
    /// Set when the tree has no variables; the single value is then cached.
    constant: Option<f64>,
}

/// Batched variable values. `x_j` must have the same length as `x_i` when present.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub x_i: &'a [f64],
    pub x_j: Option<&'a [f64]>,
    pub t: f64,
    pub params: &'a [f64],
}

/// Reusable stack buffers for [`Program::eval_batch`].
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    stack: Vec<Vec<f64>>,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        fn emit(e: &Expr, code: &mut Vec<Instr>, depth: usize, max: &mut usize) {
            *max = (*max).max(depth + 1);
            match e {
                Expr::Const(c) => code.push(Instr::Const(*c)),
                Expr::Param(k) => code.push(Instr::Param(*k)),
                Expr::Var(v) => code.push(Instr::Var(*v)),
                Expr::Unary(op, a) => {
                    emit(a, code, depth, max);
                    code.push(Instr::Unary(*op));
                }
                Expr::Binary(op, l, r) => {
                    emit(l, code, depth, max);
                    emit(r, code, depth + 1, max);
                    code.push(Instr::Binary(*op));
                }
            }
        }
        let mut code = Vec::new();
        let mut max_stack = 0;
        emit(e, &mut code, 0, &mut max_stack);
        let has_vars = code.iter().any(|i| matches!(i, Instr::Var(_) | Instr::Param(_)));
        let constant = if has_vars { None } else { e.eval(0.0, None, 0.0).ok() };
        Program { code, max_stack, constant }
    }

    pub fn uses(&self, var: Var) -> bool {
        self.code.iter().any(|i| *i == Instr::Var(var))
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    /// Evaluate on every row of `inputs`, writing into `out`. Returns
    /// [`EvalError::NonFinite`] if any output is not finite.
    pub fn eval_batch(&self, inputs: &Inputs<'_>, out: &mut [f64], scratch: &mut EvalScratch) -> Result<(), EvalError> {
        let n = inputs.x_i.len();
        debug_assert_eq!(out.len(), n);
        if let Some(c) = self.constant {
            out.fill(c);
            return if c.is_finite() { Ok(()) } else { Err(EvalError::NonFinite) };
        }
        if let Some(xj) = inputs.x_j {
            debug_assert_eq!(xj.len(), n);
        }
        let stack = &mut scratch.stack;
        if stack.len() < self.max_stack {
            stack.resize_with(self.max_stack, Vec::new);
        }
        for buf in stack.iter_mut().take(self.max_stack) {
            buf.resize(n, 0.0);
        }
        let mut sp = 0usize;
        for ins in &self.code {
            match ins {
                Instr::Const(c) => {
                    stack[sp].fill(*c);
                    sp += 1;
                }
                Instr::Param(k) => {
                    let c = *inputs.params.get(*k).ok_or(EvalError::UnboundParam(*k))?;
                    stack[sp].fill(c);
                    sp += 1;
                }
                Instr::Var(v) => {
                    match v {
                        Var::Xi => stack[sp].copy_from_slice(inputs.x_i),
                        Var::Xj => stack[sp].copy_from_slice(inputs.x_j.ok_or(EvalError::Unbound("x_j"))?),
                        Var::T => stack[sp].fill(inputs.t),
                    }
                    sp += 1;
                }
                Instr::Unary(op) => {
                    let a = &mut stack[sp - 1];
                    match op {
                        UnaryOp::Neg => a.iter_mut().for_each(|x| *x = -*x),
                        UnaryOp::Sin => a.iter_mut().for_each(|x| *x = x.sin()),
                        UnaryOp::Cos => a.iter_mut().for_each(|x| *x = x.cos()),
                        UnaryOp::Exp => a.iter_mut().for_each(|x| *x = super::protected_exp(*x)),
                        UnaryOp::Sigmoid => a.iter_mut().for_each(|x| *x = super::sigmoid(*x)),
                    }
                }
                Instr::Binary(op) => {
                    let (lo, hi) = stack.split_at_mut(sp - 1);
                    let a = &mut lo[sp - 2];
                    let b = &hi[0];
                    match op {
                        BinaryOp::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                        BinaryOp::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x -= y),
                        BinaryOp::Mul => a.iter_mut().zip(b).for_each(|(x, y)| *x *= y),
                        BinaryOp::Div => {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x = super::protected_div(*x, *y))
                        }
                    }
                    sp -= 1;
                }
            }
        }
        debug_assert_eq!(sp, 1);
        out.copy_from_slice(&stack[0]);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Index of the first row whose value is not finite, for diagnostics.
    pub fn first_bad_row(&self, inputs: &Inputs<'_>, scratch: &mut EvalScratch) -> Option<usize> {
        let mut out = vec![0.0; inputs.x_i.len()];
        let _ = self.eval_batch(inputs, &mut out, scratch);
        out.iter().position(|v| !v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn batch_matches_scalar_eval() {
        let e = parse("sin(x_i - x_j) * exp(0.3 * x_i) / (x_j + 0.5) - sigmoid(t * x_j)").unwrap();
        let p = Program::compile(&e);
        let xi = [0.1, -0.7, 2.0, 0.0];
        let xj = [0.4, 1.1, -0.5, -0.5];
        let mut out = [0.0; 4];
        let mut s = EvalScratch::default();
        p.eval_batch(&Inputs { x_i: &xi, x_j: Some(&xj), t: 0.3, params: &[] }, &mut out, &mut s)
            .unwrap();
        for k in 0..4 {
            assert_eq!(out[k], e.eval(xi[k], Some(xj[k]), 0.3).unwrap());
        }
    }

    #[test]
    fn constant_programs_fill() {
        let p = Program::compile(&parse("0.5 + 0.25").unwrap());
        let mut out = [0.0; 3];
        p.eval_batch(&Inputs { x_i: &[1.0, 2.0, 3.0], x_j: None, t: 0.0, params: &[] }, &mut out, &mut EvalScratch::default())
            .unwrap();
        assert_eq!(out, [0.75; 3]);
    }

    #[test]
    fn missing_xj_is_an_error() {
        let p = Program::compile(&parse("x_j").unwrap());
        let mut out = [0.0; 1];
        let r = p.eval_batch(&Inputs { x_i: &[1.0], x_j: None, t: 0.0, params: &[] }, &mut out, &mut EvalScratch::default());
        assert_eq!(r, Err(EvalError::Unbound("x_j")));
    }
}
