//! Small reverse-mode automatic differentiation over dense row-major
//! matrices: enough for MLPs, neighbour aggregation and backprop through an
//! unrolled fixed-step ODE solve.

mod checkpoint;
mod mlp;
mod optim;

use std::rc::Rc;

pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Layer, Mlp, MlpVars};
pub use optim::{adam_step, AdamState};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// A single column.
    pub fn column(data: Vec<f64>) -> Tensor {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_into(&self.data, self.rows, self.cols, &other.data, other.cols, &mut out.data);
        out
    }
}

fn matmul_into(a: &[f64], n: usize, k: usize, b: &[f64], m: usize, out: &mut [f64]) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Tid, Tid),
    AddBias(Tid, Tid),
    Add(Tid, Tid),
    Act(Tid, Activation),
    Scale(Tid, f64),
    LinComb(Vec<(Tid, f64)>),
    Gather(Tid, Rc<[usize]>),
    ScatterAdd { src: Tid, index: Rc<[usize]>, weights: Option<Rc<[f64]>> },
    Concat(Vec<Tid>),
    SliceRows(Tid, usize),
    Sse { a: Tid, target: Rc<Tensor> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Tid`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, t: Tid) -> Option<&Tensor> {
        self.grads.get(t.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, or zeros of `shape` if it did not influence the output.
    pub fn get_or_zeros(&self, t: Tid, shape: (usize, usize)) -> Tensor {
        self.get(t).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tid) -> &Tensor {
        &self.nodes[t.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Tid {
        self.nodes.push(Node { value, op });
        Tid(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Tid {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", va.shape(), vb.shape())));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Tid, bias: Tid) -> Result<Tid> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows != 1 || vb.cols != va.cols {
            return Err(Error::Shape(format!("bias {:?} for {:?}", vb.shape(), va.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&vb.data).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn act(&mut self, a: Tid, f: Activation) -> Tid {
        if f == Activation::Identity {
            return a;
        }
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = f.apply(*v));
        self.push(out, Op::Act(a, f))
    }

    pub fn scale(&mut self, a: Tid, s: f64) -> Tid {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// `sum_k c_k * a_k` over same-shaped operands.
    pub fn lincomb(&mut self, terms: &[(Tid, f64)]) -> Result<Tid> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::invalid("empty linear combination"));
        };
        let shape = self.value(first).shape();
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &(t, c) in terms {
            let v = self.value(t);
            if v.shape() != shape {
                return Err(Error::Shape(format!("lincomb {:?} vs {:?}", v.shape(), shape)));
            }
            out.data.iter_mut().zip(&v.data).for_each(|(o, x)| *o += c * x);
        }
        Ok(self.push(out, Op::LinComb(terms.to_vec())))
    }

    /// Row `k` of the result is row `index[k]` of `a`.
    pub fn gather(&mut self, a: Tid, index: Rc<[usize]>) -> Result<Tid> {
        let va = self.value(a);
        if index.iter().any(|&i| i >= va.rows) {
            return Err(Error::Shape("gather index out of range".into()));
        }
        let mut out = Tensor::zeros(index.len(), va.cols);
        for (k, &i) in index.iter().enumerate() {
            out.data[k * va.cols..(k + 1) * va.cols].copy_from_slice(va.row(i));
        }
        Ok(self.push(out, Op::Gather(a, index)))
    }

    /// Row `index[k]` of the `rows`-row result accumulates `weights[k] * a[k]`.
    pub fn scatter_add(&mut self, a: Tid, index: Rc<[usize]>, weights: Option<Rc<[f64]>>, rows: usize) -> Result<Tid> {
        let va = self.value(a);
        if index.len() != va.rows || index.iter().any(|&i| i >= rows) {
            return Err(Error::Shape("scatter index mismatch".into()));
        }
        if let Some(w) = &weights {
            if w.len() != index.len() {
                return Err(Error::Shape("scatter weight count".into()));
            }
        }
        let c = va.cols;
        let mut out = Tensor::zeros(rows, c);
        for (k, &i) in index.iter().enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[k]);
            out.data[i * c..(i + 1) * c].iter_mut().zip(va.row(k)).for_each(|(o, x)| *o += w * x);
        }
        Ok(self.push(out, Op::ScatterAdd { src: a, index, weights }))
    }

    /// Column-wise concatenation of same-height operands.
    pub fn concat(&mut self, parts: &[Tid]) -> Result<Tid> {
        let rows = self.value(parts[0]).rows;
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(Error::Shape("concat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
                off += v.cols;
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Tid, start: usize, end: usize) -> Result<Tid> {
        let va = self.value(a);
        if start > end || end > va.rows {
            return Err(Error::Shape(format!("rows {start}..{end} of {:?}", va.shape())));
        }
        let out = Tensor { rows: end - start, cols: va.cols, data: va.data[start * va.cols..end * va.cols].to_vec() };
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Sum of squared differences to a constant target, as a `1 x 1` value.
    pub fn sse(&mut self, a: Tid, target: Rc<Tensor>) -> Result<Tid> {
        let va = self.value(a);
        if va.shape() != target.shape() {
            return Err(Error::Shape(format!("sse {:?} vs {:?}", va.shape(), target.shape())));
        }
        let s = va.data.iter().zip(&target.data).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sse { a, target }))
    }

    /// Reverse sweep from a scalar output with unit seed.
    pub fn backward(&self, out: Tid) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::invalid("backward on a value not recorded on this tape"));
        }
        let v = self.value(out);
        if v.shape() != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", v.shape())));
        }
        self.backward_with(out, Tensor::scalar(1.0))
    }

    /// Reverse sweep seeded with an explicit adjoint for `out`.
    pub fn backward_with(&self, out: Tid, seed: Tensor) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::invalid("backward on a value not recorded on this tape"));
        }
        if seed.shape() != self.value(out).shape() {
            return Err(Error::Shape("seed shape".into()));
        }
        let mut g: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        g[out.0] = Some(seed);
        fn acc(g: &mut [Option<Tensor>], t: Tid, d: Tensor) {
            match &mut g[t.0] {
                Some(x) => x.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        }
        for idx in (0..=out.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    g[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    // dA = dY B^T
                    let mut da = Tensor::zeros(va.rows, va.cols);
                    for i in 0..va.rows {
                        for p in 0..va.cols {
                            let brow = vb.row(p);
                            da.data[i * va.cols + p] = dy.row(i).iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    // dB = A^T dY
                    let mut db = Tensor::zeros(vb.rows, vb.cols);
                    for i in 0..va.rows {
                        let dyr = dy.row(i);
                        for p in 0..va.cols {
                            let av = va.data[i * va.cols + p];
                            if av == 0.0 {
                                continue;
                            }
                            db.data[p * vb.cols..(p + 1) * vb.cols].iter_mut().zip(dyr).for_each(|(o, d)| *o += av * d);
                        }
                    }
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::AddBias(a, b) => {
                    let mut db = Tensor::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        db.data.iter_mut().zip(dy.row(r)).for_each(|(o, d)| *o += d);
                    }
                    acc(&mut g, *b, db);
                    acc(&mut g, *a, dy);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, dy.clone());
                    acc(&mut g, *a, dy);
                }
                Op::Act(a, f) => {
                    let y = &node.value;
                    let mut da = dy;
                    da.data.iter_mut().zip(&y.data).for_each(|(d, &yv)| *d *= f.derivative_from_output(yv));
                    acc(&mut g, *a, da);
                }
                Op::Scale(a, s) => {
                    let mut da = dy;
                    da.data.iter_mut().for_each(|d| *d *= s);
                    acc(&mut g, *a, da);
                }
                Op::LinComb(terms) => {
                    for &(t, c) in terms {
                        let mut d = dy.clone();
                        d.data.iter_mut().for_each(|x| *x *= c);
                        acc(&mut g, t, d);
                    }
                }
                Op::Gather(a, index) => {
                    let va = self.value(*a);
                    let mut da = Tensor::zeros(va.rows, va.cols);
                    let c = va.cols;
                    for (k, &i) in index.iter().enumerate() {
                        da.data[i * c..(i + 1) * c].iter_mut().zip(dy.row(k)).for_each(|(o, d)| *o += d);
                    }
                    acc(&mut g, *a, da);
                }
                Op::ScatterAdd { src, index, weights } => {
                    let c = dy.cols;
                    let mut da = Tensor::zeros(index.len(), c);
                    for (k, &i) in index.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[k]);
                        da.data[k * c..(k + 1) * c].iter_mut().zip(dy.row(i)).for_each(|(o, d)| *o = w * d);
                    }
                    acc(&mut g, *src, da);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut d = Tensor::zeros(dy.rows, pc);
                        for r in 0..dy.rows {
                            d.data[r * pc..(r + 1) * pc].copy_from_slice(&dy.row(r)[off..off + pc]);
                        }
                        off += pc;
                        acc(&mut g, p, d);
                    }
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let mut da = Tensor::zeros(va.rows, va.cols);
                    da.data[start * va.cols..start * va.cols + dy.data.len()].copy_from_slice(&dy.data);
                    acc(&mut g, *a, da);
                }
                Op::Sse { a, target } => {
                    let va = self.value(*a);
                    let s = 2.0 * dy.data[0];
                    let data = va.data.iter().zip(&target.data).map(|(x, y)| s * (x - y)).collect();
                    acc(&mut g, *a, Tensor { rows: va.rows, cols: va.cols, data });
                }
            }
        }
        Ok(Gradients { grads: g })
    }
}
