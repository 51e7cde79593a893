//! Least-squares fitting of skeleton placeholders (Levenberg–Marquardt with
//! a forward-difference Jacobian).

use nalgebra::{DMatrix, DVector};

use super::{EvalScratch, Expr, Inputs, Program};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    /// Root-mean-square residual at `params`.
    pub rms: f64,
}

/// Sample points shared by every evaluation of one fit.
pub(crate) struct Samples<'a> {
    pub x_i: &'a [f64],
    pub x_j: Option<&'a [f64]>,
    pub t: f64,
}

fn residuals(prog: &Program, s: &Samples<'_>, target: &[f64], params: &[f64], out: &mut [f64], scratch: &mut EvalScratch) -> bool {
    let inputs = Inputs { x_i: s.x_i, x_j: s.x_j, t: s.t, params };
    if prog.eval_batch(&inputs, out, scratch).is_err() {
        return false;
    }
    for (o, y) in out.iter_mut().zip(target) {
        *o -= y;
    }
    true
}

fn rms(r: &[f64]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / r.len().max(1) as f64).sqrt()
}

/// Fit the placeholders of `skeleton` so it matches `target` at the sample
/// points. `fixed` pins some placeholders to given values. Returns `None`
/// when the skeleton cannot be evaluated at `init`.
pub(crate) fn lm_fit(
    skeleton: &Expr,
    samples: &Samples<'_>,
    target: &[f64],
    init: &[f64],
    fixed: &[(usize, f64)],
    max_iter: usize,
) -> Option<FitOutcome> {
    let prog = Program::compile(skeleton);
    let n = target.len();
    let mut scratch = EvalScratch::default();
    let mut params = init.to_vec();
    for &(k, v) in fixed {
        params[k] = v;
    }
    let free: Vec<usize> = (0..params.len()).filter(|k| !fixed.iter().any(|(f, _)| f == k)).collect();
    let mut r = vec![0.0; n];
    if !residuals(&prog, samples, target, &params, &mut r, &mut scratch) {
        return None;
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if free.is_empty() {
        return Some(FitOutcome { params, rms: rms(&r) });
    }
    let m = free.len();
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(n, m);
    let mut r_trial = vec![0.0; n];
    for _ in 0..max_iter {
        for (col, &k) in free.iter().enumerate() {
            let h = 1e-7 * params[k].abs().max(1.0);
            let mut p = params.clone();
            p[k] += h;
            if !residuals(&prog, samples, target, &p, &mut r_trial, &mut scratch) {
                return Some(FitOutcome { params, rms: rms(&r) });
            }
            for row in 0..n {
                jac[(row, col)] = (r_trial[row] - r[row]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..m {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let mut trial = params.clone();
            for (col, &k) in free.iter().enumerate() {
                trial[k] += step[col];
            }
            if residuals(&prog, samples, target, &trial, &mut r_trial, &mut scratch) {
                let c: f64 = r_trial.iter().map(|v| v * v).sum();
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    params = trial;
                    std::mem::swap(&mut r, &mut r_trial);
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-15 {
                        return Some(FitOutcome { params, rms: rms(&r) });
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }
    Some(FitOutcome { params, rms: rms(&r) })
}

/// Fit the placeholders of `skeleton` to `(x_i, x_j) -> target` samples,
/// starting from `init`.
pub fn fit_params(skeleton: &Expr, x_i: &[f64], x_j: Option<&[f64]>, target: &[f64], init: &[f64]) -> Option<FitOutcome> {
    lm_fit(skeleton, &Samples { x_i, x_j, t: 0.0 }, target, init, &[], 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn recovers_nonlinear_placeholders() {
        let sk = parse("sigmoid(c0 * x_j + c1)").unwrap();
        let xi: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
        let xj: Vec<f64> = (0..50).map(|k| (k as f64 * 0.37).sin() * 2.0).collect();
        let y: Vec<f64> = xj.iter().map(|&x| crate::expr::sigmoid(0.75 * (x - 0.5))).collect();
        let fit = fit_params(&sk, &xi, Some(&xj), &y, &[0.1, 0.1]).unwrap();
        assert!(fit.rms < 1e-10, "{fit:?}");
        assert!((fit.params[0] - 0.75).abs() < 1e-6);
        assert!((fit.params[1] + 0.375).abs() < 1e-6);
    }
}
