//! Sampled node trajectories, timestamp grids, observation noise and the
//! long-format CSV representation `t,node,dim,value`.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// How a trajectory came to be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Clean,
    Noisy { snr_db: f64 },
    Interpolated,
}

/// States at strictly increasing times, stored time-major as
/// `states[(k * n_nodes + v) * dim + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    n_nodes: usize,
    dim: usize,
    states: Vec<f64>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, n_nodes: usize, dim: usize, states: Vec<f64>) -> Result<Trajectory> {
        if dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        if states.len() != times.len() * n_nodes * dim {
            return Err(Error::Shape(format!(
                "{} values for {} times x {} nodes x {} dims",
                states.len(),
                times.len(),
                n_nodes,
                dim
            )));
        }
        super::solver::check_times(&times).map_err(|e| Error::format("trajectory", e.to_string()))?;
        Ok(Trajectory { times, n_nodes, dim, states, provenance: Provenance::Clean })
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Flat state of every node at time index `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        let w = self.n_nodes * self.dim;
        &self.states[k * w..(k + 1) * w]
    }

    pub fn value(&self, k: usize, node: usize, d: usize) -> f64 {
        self.states[(k * self.n_nodes + node) * self.dim + d]
    }

    /// Root mean square of all values.
    pub fn rms(&self) -> f64 {
        (self.states.iter().map(|v| v * v).sum::<f64>() / self.states.len().max(1) as f64).sqrt()
    }

    /// Mean squared difference against a trajectory of the same shape.
    pub fn mse(&self, other: &Trajectory) -> Result<f64> {
        if self.states.len() != other.states.len() || self.n_nodes != other.n_nodes {
            return Err(Error::Shape("trajectories differ in shape".into()));
        }
        let s: f64 = self.states.iter().zip(&other.states).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.states.len().max(1) as f64)
    }

    /// Restrict to time indices `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        let w = self.n_nodes * self.dim;
        Trajectory {
            times: self.times[range.clone()].to_vec(),
            n_nodes: self.n_nodes,
            dim: self.dim,
            states: self.states[range.start * w..range.end * w].to_vec(),
            provenance: self.provenance,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.states.len() * 32);
        s.push_str("t,node,dim,value\n");
        for (k, t) in self.times.iter().enumerate() {
            for v in 0..self.n_nodes {
                for d in 0..self.dim {
                    let _ = writeln!(s, "{:.16e},{},{},{:.16e}", t, v, d, self.value(k, v, d));
                }
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "t,node,dim,value" => {}
            _ => return Err(Error::format("trajectory csv", "missing header `t,node,dim,value`")),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let bad = |msg: &str| Error::format("trajectory csv", format!("line {}: {msg}", lineno + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let t: f64 = f[0].parse().map_err(|_| bad("bad time"))?;
            let v: usize = f[1].parse().map_err(|_| bad("bad node id"))?;
            let d: usize = f[2].parse().map_err(|_| bad("bad dim index"))?;
            let x: f64 = f[3].parse().map_err(|_| bad("bad value"))?;
            rows.push((t, v, d, x));
        }
        if rows.is_empty() {
            return Err(Error::format("trajectory csv", "no rows"));
        }
        let mut times: Vec<f64> = Vec::new();
        for r in &rows {
            match times.last() {
                Some(&last) if last == r.0 => {}
                Some(&last) if r.0 < last || times.contains(&r.0) => {
                    return Err(Error::format("trajectory csv", format!("timestamp {} is not monotone", r.0)));
                }
                _ => times.push(r.0),
            }
        }
        let n_nodes = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let dim = rows.iter().map(|r| r.2).max().unwrap() + 1;
        let w = n_nodes * dim;
        if rows.len() != times.len() * w {
            return Err(Error::format("trajectory csv", "grid is incomplete"));
        }
        let mut states = vec![f64::NAN; times.len() * w];
        let mut seen = vec![false; states.len()];
        let mut k = 0;
        for r in &rows {
            if times[k] != r.0 {
                k += 1;
            }
            let idx = k * w + r.1 * dim + r.2;
            if seen[idx] {
                return Err(Error::format("trajectory csv", format!("duplicate entry at t={}, node {}", r.0, r.1)));
            }
            seen[idx] = true;
            states[idx] = r.3;
        }
        Trajectory::new(times, n_nodes, dim, states)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Trajectory> {
        Trajectory::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// `n` evenly spaced timestamps covering `[t0, t1]` inclusive.
pub fn regular_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![t0],
        _ => (0..n).map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Regular,
    /// Sorted uniform draws, always keeping both end points.
    Irregular,
}

/// Timestamps on `[t0, t1]`.
pub fn sample_times(t0: f64, t1: f64, n: usize, mode: Sampling, seed: u64) -> Vec<f64> {
    match mode {
        Sampling::Regular => regular_times(t0, t1, n),
        Sampling::Irregular => {
            if n < 3 {
                return regular_times(t0, t1, n);
            }
            let mut r = rng::rng(seed);
            let mut out: Vec<f64> = Vec::with_capacity(n);
            out.push(t0);
            out.push(t1);
            while out.len() < n {
                let t = rand::Rng::random_range(&mut r, t0..t1);
                if !out.contains(&t) {
                    out.push(t);
                }
            }
            out.sort_by(f64::total_cmp);
            out
        }
    }
}

/// Additive white Gaussian noise at `snr_db` relative to the signal RMS.
/// An infinite SNR returns the input unchanged.
pub fn add_noise(traj: &Trajectory, snr_db: f64, seed: u64) -> Result<Trajectory> {
    if snr_db == f64::INFINITY {
        return Ok(traj.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR {snr_db} dB")));
    }
    let sigma = traj.rms() * 10f64.powf(-snr_db / 20.0);
    let mut out = traj.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut r = rng::rng(seed);
        for v in &mut out.states {
            *v += normal.sample(&mut r);
        }
    }
    out.provenance = Provenance::Noisy { snr_db };
    Ok(out)
}
