use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Tid};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation `{s}`"))),
        }
    }
}

/// Affine map `y = act(x W + b)` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Tape handles for an [`Mlp`]'s parameters, one `(W, b)` pair per layer.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub params: Vec<(Tid, Tid)>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`, one activation per layer. Weights and
    /// biases are uniform in `±sqrt(1/fan_in)`.
    pub fn new(sizes: &[usize], acts: &[Activation], rng: &mut Rng) -> Result<Mlp> {
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::invalid(format!("mlp sizes {sizes:?} with {} activations", acts.len())));
        }
        let layers = sizes
            .windows(2)
            .zip(acts)
            .map(|(w, &act)| {
                let bound = (1.0 / w[0] as f64).sqrt();
                let mut draw = |n| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<f64>>();
                Layer {
                    weight: Tensor { rows: w[0], cols: w[1], data: draw(w[0] * w[1]) },
                    bias: Tensor { rows: 1, cols: w[1], data: draw(w[1]) },
                    act,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// Build from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        for l in &layers {
            if l.bias.rows != 1 || l.bias.cols != l.weight.cols {
                return Err(Error::Shape("bias does not match weight".into()));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::invalid("non-finite mlp parameter"));
            }
        }
        if layers.windows(2).any(|w| w[0].weight.cols != w[1].weight.rows) {
            return Err(Error::Shape("layer shapes do not chain".into()));
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data.len() + l.bias.data.len()).sum()
    }

    /// Batched forward pass without recording; rows are samples.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape(format!("input width {} for mlp expecting {}", x.cols, self.input_dim())));
        }
        let mut h = x.clone();
        for l in &self.layers {
            let mut y = h.matmul(&l.weight);
            for r in 0..y.rows {
                for c in 0..y.cols {
                    let v = y.data[r * y.cols + c] + l.bias.data[c];
                    y.data[r * y.cols + c] = l.act.apply(v);
                }
            }
            h = y;
        }
        Ok(h)
    }

    /// Put every parameter on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars { params: self.layers.iter().map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))).collect() }
    }

    /// Recorded forward pass using handles from [`Mlp::register`].
    pub fn forward_tape(&self, vars: &MlpVars, tape: &mut Tape, x: Tid) -> Result<Tid> {
        if tape.value(x).cols != self.input_dim() {
            return Err(Error::Shape(format!("input width {} for mlp expecting {}", tape.value(x).cols, self.input_dim())));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().zip(&vars.params) {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = tape.act(z, l.act);
        }
        Ok(h)
    }

    /// Recorded pass through layers `from..` only.
    pub fn forward_tape_from(&self, vars: &MlpVars, tape: &mut Tape, x: Tid, from: usize) -> Result<Tid> {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().zip(&vars.params).skip(from) {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = tape.act(z, l.act);
        }
        Ok(h)
    }

    /// Parameters flattened layer by layer (weights then bias).
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias.data);
        }
    }

    /// Inverse of [`Mlp::flatten_into`]; returns the number of values read.
    pub fn load_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.data.len();
            l.weight.data.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.data.len();
            l.bias.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        off
    }

    /// Gradients for `vars` in the order of [`Mlp::flatten_into`].
    pub fn flatten_grads(&self, vars: &MlpVars, grads: &super::Gradients, out: &mut Vec<f64>) {
        for (l, &(w, b)) in self.layers.iter().zip(&vars.params) {
            out.extend_from_slice(&grads.get_or_zeros(w, l.weight.shape()).data);
            out.extend_from_slice(&grads.get_or_zeros(b, l.bias.shape()).data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_arithmetic() {
        let m = Mlp::from_layers(vec![Layer {
            weight: Tensor::scalar(2.0),
            bias: Tensor::scalar(1.0),
            act: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(m.forward(&Tensor::scalar(3.0)).unwrap().data, vec![7.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut m = Mlp::new(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], &mut crate::rng::rng(1)).unwrap();
        for l in &mut m.layers {
            l.weight.data.fill(0.0);
        }
        let b = m.layers[1].bias.data.clone();
        let out = m.forward(&Tensor::from_vec(2, 3, vec![1.0, -2.0, 5.0, 0.3, 0.0, 9.0]).unwrap()).unwrap();
        assert_eq!(out.row(0), &b[..]);
        assert_eq!(out.row(1), &b[..]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = Mlp::new(&[3, 2], &[Activation::Relu], &mut crate::rng::rng(1)).unwrap();
        assert!(m.forward(&Tensor::zeros(1, 2)).is_err());
        assert!(Mlp::new(&[3, 2], &[], &mut crate::rng::rng(1)).is_err());
    }
}
