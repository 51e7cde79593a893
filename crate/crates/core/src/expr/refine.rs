//! Derivative-free polishing of the constants of a fixed skeleton.

use super::Expr;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub expr: Expr,
    pub objective: f64,
    pub evaluations: usize,
}

/// Coordinate pattern search over the constants of `expr`. Only strictly
/// improving moves are accepted, so the returned objective never exceeds the
/// starting one, and the tree shape is never touched.
pub fn refine_constants<F>(expr: &Expr, mut objective: F, budget: usize) -> RefineOutcome
where
    F: FnMut(&Expr) -> f64,
{
    let mut consts = expr.constants();
    let mut best = objective(expr);
    let mut evaluations = 1;
    if consts.is_empty() || !best.is_finite() {
        return RefineOutcome { expr: expr.clone(), objective: best, evaluations };
    }
    let mut steps: Vec<f64> = consts.iter().map(|c| 0.1 * c.abs().max(0.1)).collect();
    'outer: while evaluations < budget {
        let mut moved = false;
        for k in 0..consts.len() {
            for dir in [1.0, -1.0] {
                if evaluations >= budget {
                    break 'outer;
                }
                let mut trial = consts.clone();
                trial[k] += dir * steps[k];
                let value = objective(&expr.with_constants(&trial));
                evaluations += 1;
                if value < best {
                    best = value;
                    consts = trial;
                    moved = true;
                    // keep pushing in a productive direction
                    steps[k] *= 1.5;
                    break;
                }
            }
        }
        if !moved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
            if steps.iter().all(|s| *s < 1e-12) {
                break;
            }
        }
    }
    RefineOutcome { expr: expr.with_constants(&consts), objective: best, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn nothing_to_refine() {
        let e = parse("sin(x_i - x_j)").unwrap();
        let out = refine_constants(&e, |_| 1.0, 200);
        assert_eq!(out.expr, e);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let e = parse("0.0 * x_i + 0.0").unwrap();
        let out = refine_constants(&e, |x| {
            let c = x.constants();
            (c[0] - 0.3).powi(2) + (c[1] + 0.7).powi(2)
        }, 200);
        let c = out.expr.constants();
        assert!((c[0] - 0.3).abs() < 1e-3 && (c[1] + 0.7).abs() < 1e-3, "{c:?}");
        assert!(out.evaluations <= 200);
    }

    #[test]
    fn never_worse_than_start() {
        let e = parse("0.5 * x_i").unwrap();
        let start = 0.25;
        let out = refine_constants(&e, |x| (x.constants()[0] - 0.5).abs() + start, 50);
        assert!(out.objective <= start);
        assert_eq!(out.expr, e);
    }
}
