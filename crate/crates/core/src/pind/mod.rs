//! Graph neural ODE `dx_v/dt = Dec(phi_n(h_v, t) + sum_u a_vu phi_e(h_v, h_u, t))`
//! with `h = Enc(x)`, trained on sampled trajectories, used to densify and
//! denoise observations and to expose neural estimates of the node and edge
//! terms.

use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, Activation, AdamState, Checkpoint, Layer, Mlp, MlpVars, Tape, Tensor, Tid};
use crate::dynamics::{check_times, regular_times, DynamicsKind, Provenance, SimError, Trajectory};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

/// Network shape. `dec_act = None` makes the decoder a single affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PindArch {
    pub latent: usize,
    pub enc_act: Activation,
    pub dec_act: Option<Activation>,
    pub phi_n_act: Activation,
    pub phi_e_act: Activation,
    pub phi_n_layers: usize,
    pub phi_e_layers: usize,
}

impl PindArch {
    /// Per-dynamics defaults with an affine decoder.
    pub fn for_kind(kind: DynamicsKind) -> PindArch {
        use Activation::*;
        let (n_act, e_act, enc, n_l, e_l) = match kind {
            DynamicsKind::Sis => (Relu, Relu, Relu, 2, 2),
            DynamicsKind::Lv => (Relu, Tanh, Tanh, 2, 2),
            DynamicsKind::Kur => (Relu, Tanh, Tanh, 1, 3),
            DynamicsKind::Wc => (Relu, Sigmoid, Relu, 1, 2),
        };
        PindArch { latent: 10, enc_act: enc, dec_act: None, phi_n_act: n_act, phi_e_act: e_act, phi_n_layers: n_l, phi_e_layers: e_l }
    }

    /// Same as [`PindArch::for_kind`] but with a nonlinear decoder using
    /// the encoder's activation.
    pub fn with_nonlinear_decoder(mut self) -> PindArch {
        self.dec_act = Some(self.enc_act);
        self
    }
}

/// Fixed affine normalisation of inputs, time and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_shift: f64,
    pub x_scale: f64,
    pub t0: f64,
    pub t_scale: f64,
}

impl Normalization {
    pub fn identity() -> Normalization {
        Normalization { x_shift: 0.0, x_scale: 1.0, t0: 0.0, t_scale: 1.0 }
    }

    pub fn from_observations(obs: &Trajectory) -> Normalization {
        let n = obs.states().len().max(1) as f64;
        let mean = obs.states().iter().sum::<f64>() / n;
        let var = obs.states().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let t = obs.times();
        let span = t[t.len() - 1] - t[0];
        Normalization {
            x_shift: mean,
            x_scale: if sd > 1e-8 { sd } else { 1.0 },
            t0: t[0],
            t_scale: if span > 0.0 { span } else { 1.0 },
        }
    }

    fn out_scale(&self) -> f64 {
        self.x_scale / self.t_scale
    }

    fn time_feature(&self, t: f64) -> f64 {
        (t - self.t0) / self.t_scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PindModel {
    pub arch: PindArch,
    pub dim: usize,
    pub enc: Mlp,
    pub dec: Mlp,
    pub phi_n: Mlp,
    pub phi_e: Mlp,
    pub norm: Normalization,
}

fn mlp_stack(input: usize, width: usize, output: usize, layers: usize, act: Activation, rng: &mut rng::Rng) -> Result<Mlp> {
    let layers = layers.max(1);
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(width, layers - 1));
    sizes.push(output);
    let mut acts = vec![act; layers - 1];
    acts.push(Activation::Identity);
    Mlp::new(&sizes, &acts, rng)
}

/// Graph indices shared by every right-hand-side evaluation.
struct GraphCtx {
    n: usize,
    recv: Rc<[usize]>,
    send: Rc<[usize]>,
    weights: Option<Rc<[f64]>>,
}

impl GraphCtx {
    fn new(graph: &Graph) -> GraphCtx {
        let p = graph.directed_pairs();
        GraphCtx {
            n: graph.n_nodes(),
            recv: Rc::from(p.receiver),
            send: Rc::from(p.sender),
            weights: (!p.unit_weights).then(|| Rc::from(p.weight)),
        }
    }
}

struct Vars {
    enc: MlpVars,
    dec: MlpVars,
    phi_n: MlpVars,
    phi_e: MlpVars,
    // first-layer weight blocks: latent rows and the time row
    n_h: Tid,
    n_t: Tid,
    e_i: Tid,
    e_j: Tid,
    e_t: Tid,
}

impl PindModel {
    /// Node states of dimension `dim`; encoder is one layer, latent nets
    /// have `phi_*_layers` affine layers with activations between them.
    pub fn new(arch: PindArch, dim: usize, norm: Normalization, seed: u64) -> Result<PindModel> {
        if arch.latent == 0 || dim == 0 {
            return Err(Error::invalid("latent and state dimensions must be positive"));
        }
        let mut r = rng::rng(seed);
        let d = arch.latent;
        let enc = Mlp::new(&[dim, d], &[arch.enc_act], &mut r)?;
        let dec = match arch.dec_act {
            None => Mlp::new(&[d, dim], &[Activation::Identity], &mut r)?,
            Some(a) => Mlp::new(&[d, d, dim], &[a, Activation::Identity], &mut r)?,
        };
        let phi_n = mlp_stack(d + 1, d, d, arch.phi_n_layers, arch.phi_n_act, &mut r)?;
        let phi_e = mlp_stack(2 * d + 1, d, d, arch.phi_e_layers, arch.phi_e_act, &mut r)?;
        Ok(PindModel { arch, dim, enc, dec, phi_n, phi_e, norm })
    }

    pub fn n_params(&self) -> usize {
        self.enc.n_params() + self.dec.n_params() + self.phi_n.n_params() + self.phi_e.n_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for m in [&self.enc, &self.dec, &self.phi_n, &self.phi_e] {
            m.flatten_into(&mut v);
        }
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut off = 0;
        for m in [&mut self.enc, &mut self.dec, &mut self.phi_n, &mut self.phi_e] {
            off += m.load_flat(&flat[off..]);
        }
        Ok(())
    }

    /// Zero the decoder's last layer so the vector field vanishes.
    pub fn zero_output_layer(&mut self) {
        let l = self.dec.layers.last_mut().unwrap();
        l.weight.data.fill(0.0);
        l.bias.data.fill(0.0);
    }

    fn register(&self, tape: &mut Tape) -> Result<Vars> {
        let d = self.arch.latent;
        let phi_n = self.phi_n.register(tape);
        let phi_e = self.phi_e.register(tape);
        let (wn, we) = (phi_n.params[0].0, phi_e.params[0].0);
        Ok(Vars {
            enc: self.enc.register(tape),
            dec: self.dec.register(tape),
            n_h: tape.slice_rows(wn, 0, d)?,
            n_t: tape.slice_rows(wn, d, d + 1)?,
            e_i: tape.slice_rows(we, 0, d)?,
            e_j: tape.slice_rows(we, d, 2 * d)?,
            e_t: tape.slice_rows(we, 2 * d, 2 * d + 1)?,
            phi_n,
            phi_e,
        })
    }

    fn grads(&self, vars: &Vars, g: &crate::autodiff::Gradients) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        self.enc.flatten_grads(&vars.enc, g, &mut v);
        self.dec.flatten_grads(&vars.dec, g, &mut v);
        self.phi_n.flatten_grads(&vars.phi_n, g, &mut v);
        self.phi_e.flatten_grads(&vars.phi_e, g, &mut v);
        v
    }

    /// Recorded right-hand side for an `n x dim` state.
    fn rhs_tape(&self, vars: &Vars, tape: &mut Tape, ctx: &GraphCtx, x: Tid, t: f64) -> Result<Tid> {
        let nz = &self.norm;
        let xs = tape.scale(x, 1.0 / nz.x_scale);
        let shift = tape.leaf(Tensor { rows: 1, cols: self.dim, data: vec![-nz.x_shift / nz.x_scale; self.dim] });
        let xs = tape.add_bias(xs, shift)?;
        let h = self.enc.forward_tape(&vars.enc, tape, xs)?;
        let tau = nz.time_feature(t);
        // The first layers of phi_n and phi_e act on [h, t] and [h_i, h_j, t].
        // Splitting their weights lets the latent products run once per node
        // and be gathered onto edges afterwards.
        let bn = tape.lincomb(&[(vars.phi_n.params[0].1, 1.0), (vars.n_t, tau)])?;
        let zn = tape.matmul(h, vars.n_h)?;
        let zn = tape.add_bias(zn, bn)?;
        let zn = tape.act(zn, self.phi_n.layers[0].act);
        let mut dh = self.phi_n.forward_tape_from(&vars.phi_n, tape, zn, 1)?;
        if !ctx.recv.is_empty() {
            let p = tape.matmul(h, vars.e_i)?;
            let q = tape.matmul(h, vars.e_j)?;
            let pe = tape.gather(p, ctx.recv.clone())?;
            let qe = tape.gather(q, ctx.send.clone())?;
            let ze = tape.add(pe, qe)?;
            let be = tape.lincomb(&[(vars.phi_e.params[0].1, 1.0), (vars.e_t, tau)])?;
            let ze = tape.add_bias(ze, be)?;
            let ze = tape.act(ze, self.phi_e.layers[0].act);
            let msg = self.phi_e.forward_tape_from(&vars.phi_e, tape, ze, 1)?;
            let agg = tape.scatter_add(msg, ctx.recv.clone(), ctx.weights.clone(), ctx.n)?;
            dh = tape.add(dh, agg)?;
        }
        let out = self.dec.forward_tape(&vars.dec, tape, dh)?;
        Ok(tape.scale(out, nz.out_scale()))
    }

    fn rk4_tape(&self, vars: &Vars, tape: &mut Tape, ctx: &GraphCtx, x: Tid, t: f64, h: f64) -> Result<Tid> {
        let k1 = self.rhs_tape(vars, tape, ctx, x, t)?;
        let x2 = tape.lincomb(&[(x, 1.0), (k1, 0.5 * h)])?;
        let k2 = self.rhs_tape(vars, tape, ctx, x2, t + 0.5 * h)?;
        let x3 = tape.lincomb(&[(x, 1.0), (k2, 0.5 * h)])?;
        let k3 = self.rhs_tape(vars, tape, ctx, x3, t + 0.5 * h)?;
        let x4 = tape.lincomb(&[(x, 1.0), (k3, h)])?;
        let k4 = self.rhs_tape(vars, tape, ctx, x4, t + h)?;
        tape.lincomb(&[(x, 1.0), (k1, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let a = &self.arch;
        let meta = [
            ("latent", a.latent.to_string()),
            ("dim", self.dim.to_string()),
            ("enc_act", a.enc_act.name().to_string()),
            ("dec_act", a.dec_act.map_or("affine", |x| x.name()).to_string()),
            ("phi_n_act", a.phi_n_act.name().to_string()),
            ("phi_e_act", a.phi_e_act.name().to_string()),
            ("phi_n_layers", a.phi_n_layers.to_string()),
            ("phi_e_layers", a.phi_e_layers.to_string()),
            ("x_shift", format!("{:?}", self.norm.x_shift)),
            ("x_scale", format!("{:?}", self.norm.x_scale)),
            ("t0", format!("{:?}", self.norm.t0)),
            ("t_scale", format!("{:?}", self.norm.t_scale)),
        ];
        for (k, v) in meta {
            ck.meta.insert(k.to_string(), v);
        }
        for (name, m) in [("enc", &self.enc), ("dec", &self.dec), ("phi_n", &self.phi_n), ("phi_e", &self.phi_e)] {
            for (k, l) in m.layers.iter().enumerate() {
                ck.push(format!("{name}.{k}.w"), l.weight.clone());
                ck.push(format!("{name}.{k}.b"), l.bias.clone());
                ck.meta.insert(format!("{name}.{k}.act"), l.act.name().to_string());
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<PindModel> {
        let parse_f = |k: &str| -> Result<f64> {
            ck.meta(k)?.parse().map_err(|_| Error::format("checkpoint", format!("bad `{k}`")))
        };
        let parse_u = |k: &str| -> Result<usize> {
            ck.meta(k)?.parse().map_err(|_| Error::format("checkpoint", format!("bad `{k}`")))
        };
        let arch = PindArch {
            latent: parse_u("latent")?,
            enc_act: ck.meta("enc_act")?.parse()?,
            dec_act: match ck.meta("dec_act")? {
                "affine" => None,
                a => Some(a.parse()?),
            },
            phi_n_act: ck.meta("phi_n_act")?.parse()?,
            phi_e_act: ck.meta("phi_e_act")?.parse()?,
            phi_n_layers: parse_u("phi_n_layers")?,
            phi_e_layers: parse_u("phi_e_layers")?,
        };
        let norm = Normalization { x_shift: parse_f("x_shift")?, x_scale: parse_f("x_scale")?, t0: parse_f("t0")?, t_scale: parse_f("t_scale")? };
        let load = |name: &str| -> Result<Mlp> {
            let mut layers = Vec::new();
            for k in 0.. {
                let Some(w) = ck.get(&format!("{name}.{k}.w")) else { break };
                layers.push(Layer { weight: w.clone(), bias: ck.require(&format!("{name}.{k}.b"))?.clone(), act: ck.meta(&format!("{name}.{k}.act"))?.parse()? });
            }
            Mlp::from_layers(layers)
        };
        let model = PindModel { dim: parse_u("dim")?, enc: load("enc")?, dec: load("dec")?, phi_n: load("phi_n")?, phi_e: load("phi_e")?, arch, norm };
        if model.enc.input_dim() != model.dim || model.dec.output_dim() != model.dim {
            return Err(Error::format("checkpoint", "encoder/decoder width does not match state dimension"));
        }
        Ok(model)
    }
}

fn check_state(model: &PindModel, graph: &Graph, state: &[f64]) -> Result<()> {
    if state.len() != graph.n_nodes() * model.dim {
        return Err(Error::Shape(format!("{} values for {} nodes of dimension {}", state.len(), graph.n_nodes(), model.dim)));
    }
    Ok(())
}

/// Model vector field at `state` (flattened `n x dim`) and time `t`.
pub fn pind_rhs(model: &PindModel, graph: &Graph, state: &[f64], t: f64) -> Result<Vec<f64>> {
    check_state(model, graph, state)?;
    let ctx = GraphCtx::new(graph);
    let mut tape = Tape::new();
    let vars = model.register(&mut tape)?;
    let x = tape.leaf(Tensor::from_vec(graph.n_nodes(), model.dim, state.to_vec())?);
    let out = model.rhs_tape(&vars, &mut tape, &ctx, x, t)?;
    Ok(tape.value(out).data.clone())
}

/// Integrate the model with RK4 (`substeps` per interval) from `x0` at `times[0]`.
pub fn pind_forward(model: &PindModel, graph: &Graph, x0: &[f64], times: &[f64], substeps: usize) -> Result<Trajectory> {
    check_state(model, graph, x0)?;
    check_times(times)?;
    let substeps = substeps.max(1);
    let ctx = GraphCtx::new(graph);
    let mut states = Vec::with_capacity(x0.len() * times.len());
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            // one short tape per step keeps inference memory flat
            let mut tape = Tape::new();
            let vars = model.register(&mut tape)?;
            let xv = tape.leaf(Tensor::from_vec(graph.n_nodes(), model.dim, x)?);
            let t = w[0] + s as f64 * h;
            let next = model.rk4_tape(&vars, &mut tape, &ctx, xv, t, h)?;
            x = tape.value(next).data.clone();
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(SimError::Diverged { time: t + h, bound: 1e6 }.into());
            }
        }
        states.extend_from_slice(&x);
    }
    Trajectory::new(times.to_vec(), graph.n_nodes(), model.dim, states)
}

/// Regular grid over `[t0, t1]` with `factor` times the density of `n_obs`
/// regular observations, so a regular observation grid is a subset.
pub fn dense_times(t0: f64, t1: f64, n_obs: usize, factor: usize) -> Vec<f64> {
    regular_times(t0, t1, (n_obs.max(2) - 1) * factor.max(1) + 1)
}

/// Model trajectory on a dense regular grid over the training time range.
pub fn interpolate(model: &PindModel, graph: &Graph, x0: &[f64], times: &[f64], factor: usize, substeps: usize) -> Result<Trajectory> {
    check_times(times)?;
    let grid = dense_times(times[0], times[times.len() - 1], times.len(), factor);
    Ok(pind_forward(model, graph, x0, &grid, substeps)?.with_provenance(Provenance::Interpolated))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Every rate is tried from the same initialisation; the best validation run wins.
    pub lr_candidates: Vec<f64>,
    pub weight_decay: f64,
    /// Train / validation / test fractions of the timestamps.
    pub split: [f64; 3],
    pub substeps: usize,
    pub seed: u64,
    /// Fit the initial state instead of trusting the first observation.
    pub learn_x0: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr_candidates: vec![1e-3, 3e-3, 1e-2],
            weight_decay: 1e-3,
            split: [0.8, 0.1, 0.1],
            substeps: 1,
            seed: 0,
            learn_x0: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Timestamp indices per split. Index 0 always trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn random(k: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
        if k < 2 {
            return Err(Error::invalid("need at least two timestamps"));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
            return Err(Error::invalid(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
        }
        let mut rest: Vec<usize> = (1..k).collect();
        rest.shuffle(&mut rng::rng(seed));
        let n_val = (fractions[1] * k as f64).round() as usize;
        let n_test = (fractions[2] * k as f64).round() as usize;
        let n_val = n_val.min(rest.len().saturating_sub(1));
        let n_test = n_test.min(rest.len() - n_val - 1);
        let mut val: Vec<usize> = rest[..n_val].to_vec();
        let mut test: Vec<usize> = rest[n_val..n_val + n_test].to_vec();
        let mut train: Vec<usize> = std::iter::once(0).chain(rest[n_val + n_test..].iter().copied()).collect();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, val, test })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PindModel,
    /// Fitted initial state.
    pub x0: Vec<f64>,
    pub lr: f64,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_mse: f64,
    pub curves: Vec<CurvePoint>,
    pub split: Split,
    /// `(lr, best validation mse)` for every candidate; failed runs carry NaN.
    pub lr_scores: Vec<(f64, f64)>,
}

impl TrainOutcome {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for c in &self.curves {
            let _ = writeln!(s, "{},{:e},{:e}", c.epoch, c.train_mse, c.val_mse);
        }
        s
    }
}

/// Loss pieces from one recorded rollout.
struct Rollout {
    train_mse: f64,
    val_mse: f64,
    grad_params: Vec<f64>,
    grad_x0: Vec<f64>,
}

/// Roll out over every observation time, score the train and validation
/// indices, and backpropagate the train loss.
fn rollout(model: &PindModel, ctx: &GraphCtx, x0: &[f64], obs: &Trajectory, split: &Split, substeps: usize, want_grad: bool) -> Result<Rollout> {
    let times = obs.times();
    let (n, d) = (obs.n_nodes(), obs.dim());
    let mut tape = Tape::new();
    let vars = model.register(&mut tape)?;
    let x0v = tape.leaf(Tensor::from_vec(n, d, x0.to_vec())?);
    let mut states = vec![x0v];
    let mut x = x0v;
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            x = model.rk4_tape(&vars, &mut tape, ctx, x, w[0] + s as f64 * h, h)?;
        }
        if !tape.value(x).is_finite() {
            return Err(Error::Training(format!("non-finite state at t = {}", w[1])));
        }
        states.push(x);
    }
    let per = (n * d) as f64;
    let mut terms = Vec::with_capacity(split.train.len());
    for &k in &split.train {
        let target = Rc::new(Tensor::from_vec(n, d, obs.state(k).to_vec())?);
        terms.push((tape.sse(states[k], target)?, 1.0 / (per * split.train.len() as f64)));
    }
    let loss = tape.lincomb(&terms)?;
    let train_mse = tape.value(loss).data[0];
    let val_mse = if split.val.is_empty() {
        f64::NAN
    } else {
        let sse: f64 = split
            .val
            .iter()
            .map(|&k| tape.value(states[k]).data.iter().zip(obs.state(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        sse / (per * split.val.len() as f64)
    };
    if !train_mse.is_finite() {
        return Err(Error::Training("non-finite training loss".into()));
    }
    let (grad_params, grad_x0) = if want_grad {
        let g = tape.backward(loss)?;
        (model.grads(&vars, &g), g.get_or_zeros(x0v, (n, d)).data)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Rollout { train_mse, val_mse, grad_params, grad_x0 })
}

/// Training loss and its gradient with respect to the flattened model
/// parameters followed by `x0`, using every timestamp as training data.
pub fn loss_and_grad(model: &PindModel, graph: &Graph, obs: &Trajectory, x0: &[f64], substeps: usize) -> Result<(f64, Vec<f64>)> {
    let split = Split { train: (0..obs.n_times()).collect(), val: vec![], test: vec![] };
    let r = rollout(model, &GraphCtx::new(graph), x0, obs, &split, substeps.max(1), true)?;
    let mut g = r.grad_params;
    g.extend(r.grad_x0);
    Ok((r.train_mse, g))
}

fn mse_at(pred: &Trajectory, obs: &Trajectory, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let sse: f64 = idx.iter().map(|&k| pred.state(k).iter().zip(obs.state(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum();
    sse / (idx.len() * obs.n_nodes() * obs.dim()) as f64
}

struct RunResult {
    params: Vec<f64>,
    x0: Vec<f64>,
    best_epoch: usize,
    best_val: f64,
    curves: Vec<CurvePoint>,
}

fn train_one(init: &PindModel, ctx: &GraphCtx, obs: &Trajectory, split: &Split, cfg: &TrainConfig, lr: f64) -> Result<RunResult> {
    let mut model = init.clone();
    let mut params = model.flatten();
    let mut x0 = obs.state(0).to_vec();
    let mut st = AdamState::new(params.len());
    let mut st_x0 = AdamState::new(x0.len());
    let substeps = cfg.substeps.max(1);
    let mut best = RunResult { params: params.clone(), x0: x0.clone(), best_epoch: 0, best_val: f64::INFINITY, curves: Vec::new() };
    let score = |r: &Rollout| if r.val_mse.is_nan() { r.train_mse } else { r.val_mse };
    for epoch in 1..=cfg.epochs {
        let r = rollout(&model, ctx, &x0, obs, split, substeps, true)
            .map_err(|e| Error::Training(format!("lr {lr}, epoch {epoch}: {e}")))?;
        best.curves.push(CurvePoint { epoch, train_mse: r.train_mse, val_mse: r.val_mse });
        if score(&r) < best.best_val {
            best.best_val = score(&r);
            best.best_epoch = epoch - 1;
            best.params.clone_from(&params);
            best.x0.clone_from(&x0);
        }
        adam_step(&mut params, &r.grad_params, &mut st, lr, cfg.weight_decay);
        if cfg.learn_x0 {
            adam_step(&mut x0, &r.grad_x0, &mut st_x0, lr, 0.0);
        }
        model.load_flat(&params)?;
    }
    if let Ok(r) = rollout(&model, ctx, &x0, obs, split, substeps, false) {
        if score(&r) < best.best_val {
            best.best_val = score(&r);
            best.best_epoch = cfg.epochs;
            best.params = params;
            best.x0 = x0;
        }
    }
    Ok(best)
}

/// Fit `model` to `obs` on `graph`. Every candidate learning rate starts
/// from `model`; the returned model is the best-validation checkpoint of the
/// best candidate.
pub fn train(model: &PindModel, graph: &Graph, obs: &Trajectory, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if obs.n_times() < 2 {
        return Err(Error::invalid("training needs at least two timestamps"));
    }
    if obs.n_nodes() != graph.n_nodes() || obs.dim() != model.dim {
        return Err(Error::Shape("observations do not match graph or model".into()));
    }
    if cfg.lr_candidates.is_empty() {
        return Err(Error::invalid("no learning rates to try"));
    }
    let split = Split::random(obs.n_times(), cfg.split, rng::derive_seed(cfg.seed, "split"))?;
    let ctx = GraphCtx::new(graph);
    let mut best: Option<(f64, RunResult)> = None;
    let mut lr_scores = Vec::new();
    let mut failures = Vec::new();
    for &lr in &cfg.lr_candidates {
        match train_one(model, &ctx, obs, &split, cfg, lr) {
            Ok(run) => {
                lr_scores.push((lr, run.best_val));
                if best.as_ref().is_none_or(|(_, b)| run.best_val < b.best_val) {
                    best = Some((lr, run));
                }
            }
            Err(e) => {
                lr_scores.push((lr, f64::NAN));
                failures.push(e.to_string());
            }
        }
    }
    let Some((lr, run)) = best else {
        return Err(Error::Training(format!("every learning rate failed: {}", failures.join("; "))));
    };
    let mut trained = model.clone();
    trained.load_flat(&run.params)?;
    let pred = pind_forward(&trained, graph, &run.x0, obs.times(), cfg.substeps)?;
    let test_mse = mse_at(&pred, obs, &split.test);
    Ok(TrainOutcome {
        model: trained,
        x0: run.x0,
        lr,
        best_epoch: run.best_epoch,
        best_val: run.best_val,
        test_mse,
        curves: run.curves,
        split,
        lr_scores,
    })
}

/// Neural estimates of the node and edge terms at a fixed time.
///
/// With an affine decoder `Dec(z) = W z + b`, the bias belongs to the node
/// term and the edge term is `W phi_e`, so `F + sum G` reproduces the model's
/// vector field exactly. A nonlinear decoder uses `Dec(phi_e) - Dec(0)`.
#[derive(Debug, Clone)]
pub struct NeuralRefs {
    model: PindModel,
    t: f64,
    dec_zero: Vec<f64>,
}

pub fn extract_refs(model: &PindModel) -> NeuralRefs {
    let zero = Tensor::zeros(1, model.arch.latent);
    let dec_zero = model.dec.forward(&zero).map(|t| t.data).unwrap_or_else(|_| vec![0.0; model.dim]);
    NeuralRefs { model: model.clone(), t: 0.0, dec_zero }
}

impl NeuralRefs {
    pub fn at_time(mut self, t: f64) -> NeuralRefs {
        self.t = t;
        self
    }

    fn encode(&self, x: &[f64]) -> Result<Tensor> {
        let nz = &self.model.norm;
        let d = self.model.dim;
        let xs: Vec<f64> = x.iter().map(|v| (v - nz.x_shift) / nz.x_scale).collect();
        self.model.enc.forward(&Tensor::from_vec(x.len() / d, d, xs)?)
    }

    fn with_time(&self, h: &Tensor) -> Tensor {
        let tau = self.model.norm.time_feature(self.t);
        let mut out = Tensor::zeros(h.rows, h.cols + 1);
        for r in 0..h.rows {
            out.data[r * (h.cols + 1)..r * (h.cols + 1) + h.cols].copy_from_slice(h.row(r));
            out.data[r * (h.cols + 1) + h.cols] = tau;
        }
        out
    }

    /// Node term for a batch of states (flattened `batch x dim`).
    pub fn node(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.encode(x)?;
        let z = self.model.phi_n.forward(&self.with_time(&h))?;
        let s = self.model.norm.out_scale();
        Ok(self.model.dec.forward(&z)?.data.into_iter().map(|v| v * s).collect())
    }

    /// Edge term for paired batches of receiver and sender states.
    pub fn edge(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
        if x_i.len() != x_j.len() {
            return Err(Error::Shape("edge batches differ in length".into()));
        }
        let hi = self.encode(x_i)?;
        let hj = self.encode(x_j)?;
        let l = hi.cols;
        let mut inp = Tensor::zeros(hi.rows, 2 * l + 1);
        let tau = self.model.norm.time_feature(self.t);
        for r in 0..hi.rows {
            let row = &mut inp.data[r * (2 * l + 1)..(r + 1) * (2 * l + 1)];
            row[..l].copy_from_slice(hi.row(r));
            row[l..2 * l].copy_from_slice(hj.row(r));
            row[2 * l] = tau;
        }
        let z = self.model.phi_e.forward(&inp)?;
        let out = self.model.dec.forward(&z)?;
        let s = self.model.norm.out_scale();
        let d = self.model.dim;
        Ok(out.data.iter().enumerate().map(|(k, v)| (v - self.dec_zero[k % d]) * s).collect())
    }

    /// Node term on a regular grid of `n` points over `[lo, hi]` (scalar states).
    pub fn node_grid(&self, lo: f64, hi: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let xs = regular_times(lo, hi, n);
        let ys = self.node(&xs)?;
        Ok((xs, ys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_partitions_indices() {
        let s = Split::random(100, [0.8, 0.1, 0.1], 4).unwrap();
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 10);
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.train[0], 0);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(Split::random(10, [0.8, 0.2, 0.1], 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PindModel::new(PindArch::for_kind(DynamicsKind::Kur), 1, Normalization::identity(), 5).unwrap();
        let back = PindModel::from_checkpoint(&Checkpoint::from_text(&m.to_checkpoint().to_text()).unwrap()).unwrap();
        assert_eq!(back, m);
        let m2 = PindModel::new(PindArch::for_kind(DynamicsKind::Lv).with_nonlinear_decoder(), 1, Normalization::identity(), 5).unwrap();
        assert_eq!(PindModel::from_checkpoint(&m2.to_checkpoint()).unwrap(), m2);
    }
}
