//! Time integrators for node-state systems.
//!
//! Fixed-step RK4 subdivides each requested interval so every requested
//! timestamp is hit exactly; Dormand–Prince 5(4) adapts its step but also
//! lands on each requested timestamp.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state diverged (|x| > {bound}) at t = {time}")]
    Diverged { time: f64, bound: f64 },
    #[error("evaluation failed on node {node} at t = {time}: {msg}")]
    Domain { node: usize, time: f64, msg: String },
    #[error("invalid timestamps: {0}")]
    InvalidTimes(String),
    #[error("invalid solver setting: {0}")]
    Solver(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Failure raised by a right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsError {
    pub node: usize,
    pub msg: String,
}

/// A first-order system `dx/dt = f(t, x)` over a flat state vector.
pub trait Rhs {
    fn dim(&self) -> usize;
    fn eval(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), RhsError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// RK4 with at most this step size (each interval is split evenly).
    Rk4 { max_step: f64 },
    /// RK4 with a fixed number of equal substeps per requested interval.
    Rk4Substeps { substeps: usize },
    /// Adaptive Dormand–Prince 5(4).
    Dopri5 { rtol: f64, atol: f64 },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Rk4Substeps { substeps: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub solver: Solver,
    /// Any |state| above this aborts the run.
    pub divergence_bound: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { solver: Solver::default(), divergence_bound: 1e6 }
    }
}

impl SimOptions {
    pub fn rk4_substeps(substeps: usize) -> Self {
        SimOptions { solver: Solver::Rk4Substeps { substeps }, ..Default::default() }
    }
}

pub fn check_times(times: &[f64]) -> Result<(), SimError> {
    if times.is_empty() {
        return Err(SimError::InvalidTimes("no timestamps".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(SimError::InvalidTimes("non-finite timestamp".into()));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(SimError::InvalidTimes(format!("{} does not follow {}", w[1], w[0])));
    }
    Ok(())
}

fn check_bound(x: &[f64], bound: f64, time: f64) -> Result<(), SimError> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        Err(SimError::Diverged { time, bound })
    } else {
        Ok(())
    }
}

fn rhs_err(e: RhsError, time: f64) -> SimError {
    SimError::Domain { node: e.node, time, msg: e.msg }
}

struct Rk4Buf {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Buf {
    fn new(n: usize) -> Self {
        Rk4Buf { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }
}

fn rk4_step<R: Rhs + ?Sized>(rhs: &mut R, t: f64, h: f64, x: &mut [f64], b: &mut Rk4Buf) -> Result<(), SimError> {
    rhs.eval(t, x, &mut b.k1).map_err(|e| rhs_err(e, t))?;
    for i in 0..x.len() {
        b.tmp[i] = x[i] + 0.5 * h * b.k1[i];
    }
    rhs.eval(t + 0.5 * h, &b.tmp, &mut b.k2).map_err(|e| rhs_err(e, t))?;
    for i in 0..x.len() {
        b.tmp[i] = x[i] + 0.5 * h * b.k2[i];
    }
    rhs.eval(t + 0.5 * h, &b.tmp, &mut b.k3).map_err(|e| rhs_err(e, t))?;
    for i in 0..x.len() {
        b.tmp[i] = x[i] + h * b.k3[i];
    }
    rhs.eval(t + h, &b.tmp, &mut b.k4).map_err(|e| rhs_err(e, t))?;
    for i in 0..x.len() {
        x[i] += h / 6.0 * (b.k1[i] + 2.0 * b.k2[i] + 2.0 * b.k3[i] + b.k4[i]);
    }
    Ok(())
}

/// Integrate from `x0` at `times[0]`, calling `observe(k, state)` at every
/// requested timestamp (including the first). Returns `Ok(false)` when the
/// observer stopped the run early.
pub fn integrate_observed<R, O>(rhs: &mut R, x0: &[f64], times: &[f64], opts: &SimOptions, mut observe: O) -> Result<bool, SimError>
where
    R: Rhs + ?Sized,
    O: FnMut(usize, &[f64]) -> ControlFlow<()>,
{
    check_times(times)?;
    if x0.len() != rhs.dim() {
        return Err(SimError::Shape(format!("initial state has {} entries, system has {}", x0.len(), rhs.dim())));
    }
    let bound = opts.divergence_bound;
    let mut x = x0.to_vec();
    check_bound(&x, bound, times[0])?;
    if observe(0, &x).is_break() {
        return Ok(false);
    }
    match opts.solver {
        Solver::Rk4 { .. } | Solver::Rk4Substeps { .. } => {
            let mut buf = Rk4Buf::new(x.len());
            for k in 1..times.len() {
                let (t0, t1) = (times[k - 1], times[k]);
                let n = match opts.solver {
                    Solver::Rk4 { max_step } => {
                        if !(max_step > 0.0) {
                            return Err(SimError::Solver(format!("step {max_step} must be positive")));
                        }
                        ((t1 - t0) / max_step - 1e-9).ceil().max(1.0) as usize
                    }
                    Solver::Rk4Substeps { substeps } => {
                        if substeps == 0 {
                            return Err(SimError::Solver("substeps must be positive".into()));
                        }
                        substeps
                    }
                    Solver::Dopri5 { .. } => unreachable!(),
                };
                let h = (t1 - t0) / n as f64;
                for s in 0..n {
                    let t = t0 + s as f64 * h;
                    rk4_step(rhs, t, h, &mut x, &mut buf)?;
                    check_bound(&x, bound, t + h)?;
                }
                if observe(k, &x).is_break() {
                    return Ok(false);
                }
            }
        }
        Solver::Dopri5 { rtol, atol } => {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(SimError::Solver("tolerances must be positive".into()));
            }
            let mut d = Dopri::new(x.len());
            let mut h = (times[times.len() - 1] - times[0]).abs() / 100.0;
            rhs.eval(times[0], &x, &mut d.k[0]).map_err(|e| rhs_err(e, times[0]))?;
            for k in 1..times.len() {
                let mut t = times[k - 1];
                let t_end = times[k];
                let mut steps = 0usize;
                while t < t_end {
                    steps += 1;
                    if steps > 1_000_000 {
                        return Err(SimError::Solver(format!("step budget exhausted near t = {t}")));
                    }
                    let last = t + h >= t_end;
                    let step = if last { t_end - t } else { h };
                    let err = d.attempt(rhs, t, step, &x, rtol, atol)?;
                    if err <= 1.0 {
                        t = if last { t_end } else { t + step };
                        std::mem::swap(&mut x, &mut d.y_new);
                        d.k.swap(0, 6);
                        check_bound(&x, bound, t)?;
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    h = step * factor;
                    if h < 1e-14 * t_end.abs().max(1.0) {
                        return Err(SimError::Solver(format!("step size underflow at t = {t}")));
                    }
                }
                if observe(k, &x).is_break() {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Integrate and return the states at `times`, flattened time-major.
pub fn integrate<R: Rhs + ?Sized>(rhs: &mut R, x0: &[f64], times: &[f64], opts: &SimOptions) -> Result<Vec<f64>, SimError> {
    let mut out = Vec::with_capacity(x0.len() * times.len());
    integrate_observed(rhs, x0, times, opts, |_, x| {
        out.extend_from_slice(x);
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

struct Dopri {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl Dopri {
    fn new(n: usize) -> Self {
        Dopri { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], y_new: vec![0.0; n] }
    }

    /// One trial step; `k[0]` must hold f(t, y). Returns the scaled error norm.
    fn attempt<R: Rhs + ?Sized>(&mut self, rhs: &mut R, t: f64, h: f64, y: &[f64], rtol: f64, atol: f64) -> Result<f64, SimError> {
        let n = y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            let (head, tail) = self.k.split_at_mut(s);
            let _ = head;
            rhs.eval(t + C[s] * h, &self.tmp, &mut tail[0]).map_err(|e| rhs_err(e, t))?;
        }
        // stage 7 was evaluated at the 5th-order solution (FSAL)
        self.y_new.copy_from_slice(&self.tmp);
        let mut acc = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * self.k[s][i];
            }
            let sc = atol + rtol * y[i].abs().max(self.y_new[i].abs());
            let r = h * e / sc;
            acc += r * r;
        }
        Ok((acc / n.max(1) as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl Rhs for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), RhsError> {
            dx[0] = -x[0];
            Ok(())
        }
    }

    struct Blowup;
    impl Rhs for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), RhsError> {
            dx[0] = x[0] * x[0];
            Ok(())
        }
    }

    #[test]
    fn rk4_hits_requested_times() {
        let times = [0.0, 0.3, 1.0, 1.05];
        let out = integrate(&mut Decay, &[1.0], &times, &SimOptions::rk4_substeps(50)).unwrap();
        for (x, t) in out.iter().zip(times) {
            assert!((x - (-t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn max_step_variant() {
        let opts = SimOptions { solver: Solver::Rk4 { max_step: 0.01 }, ..Default::default() };
        let out = integrate(&mut Decay, &[2.0], &[0.0, 0.5], &opts).unwrap();
        assert!((out[1] - 2.0 * (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn dopri_matches_exact() {
        let opts = SimOptions { solver: Solver::Dopri5 { rtol: 1e-10, atol: 1e-12 }, ..Default::default() };
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.3).collect();
        let out = integrate(&mut Decay, &[1.0], &times, &opts).unwrap();
        for (x, t) in out.iter().zip(&times) {
            assert!((x - (-t).exp()).abs() < 1e-8, "{x} vs {}", (-t).exp());
        }
    }

    #[test]
    fn divergence_is_reported() {
        let err = integrate(&mut Blowup, &[1.0], &[0.0, 2.0], &SimOptions { divergence_bound: 1e3, ..SimOptions::rk4_substeps(200) })
            .unwrap_err();
        match err {
            SimError::Diverged { time, .. } => assert!(time > 0.9 && time <= 1.01, "{time}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(matches!(
            integrate(&mut Decay, &[1.0], &[0.0, 1.0, 0.5], &SimOptions::default()),
            Err(SimError::InvalidTimes(_))
        ));
    }

    #[test]
    fn observer_can_stop() {
        let mut seen = 0;
        let done = integrate_observed(&mut Decay, &[1.0], &[0.0, 1.0, 2.0, 3.0], &SimOptions::default(), |k, _| {
            seen = k;
            if k == 1 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
        })
        .unwrap();
        assert!(!done);
        assert_eq!(seen, 1);
    }
}
