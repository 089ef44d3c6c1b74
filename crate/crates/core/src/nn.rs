//! Dense networks over flat parameter vectors.
//!
//! Layer `l` occupies `[W_l (fan_in x fan_out, row-major) | b_l]` in the flat
//! vector, so `h_{l+1} = act(h_l W_l + b_l)` and a batch of inputs is a
//! `T x fan_in` matrix. The same layout is consumed by the plain forward pass
//! used for acting, by the hand-written per-example backward pass, and by
//! [`MlpSpec::graph_forward`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    #[serde(default = "yes")]
    pub bias: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias_offset: Option<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Relu,
            bias: true,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            dims.push((prev, h));
            prev = h;
        }
        let mut offset = 0;
        dims.into_iter()
            .map(|(fan_in, fan_out)| {
                let w = offset;
                offset += fan_in * fan_out;
                let b = if self.bias {
                    let b = offset;
                    offset += fan_out;
                    Some(b)
                } else {
                    None
                };
                LayerShape {
                    offset: w,
                    fan_in,
                    fan_out,
                    bias_offset: b,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| {
                l.fan_in * l.fan_out
                    + if l.bias_offset.is_some() {
                        l.fan_out
                    } else {
                        0
                    }
            })
            .sum()
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn init<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> ParamVector {
        let n = self.param_count();
        let values = if scale > 0.0 {
            (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
        } else {
            vec![0.0; n]
        };
        ParamVector {
            values,
            layout: self.clone(),
        }
    }

    /// Output pre-activations for a single input.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(params.len(), self.param_count());
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x.to_vec();
        for (li, l) in layers.iter().enumerate() {
            let mut z = match l.bias_offset {
                Some(b) => params[b..b + l.fan_out].to_vec(),
                None => vec![0.0; l.fan_out],
            };
            for (i, &hv) in h.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let row = &params[l.offset + i * l.fan_out..l.offset + (i + 1) * l.fan_out];
                for (zv, w) in z.iter_mut().zip(row) {
                    *zv += hv * w;
                }
            }
            if li != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = z;
        }
        h
    }

    /// Gradient of `dout . forward(params, x)` with respect to the parameters,
    /// accumulated into `grad` with weight `scale`.
    pub fn backward_acc(
        &self,
        params: &[f64],
        x: &[f64],
        dout: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        self.forward_backward(params, x, grad, |_| {
            dout.iter().map(|d| d * scale).collect()
        });
    }

    /// One forward pass; `seed` maps the output to the cotangent `dout`, and
    /// `dout . d(output)/d(params)` is accumulated into `grad`. Returns the
    /// output.
    pub fn forward_backward(
        &self,
        params: &[f64],
        x: &[f64],
        grad: &mut [f64],
        seed: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Vec<f64> {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        acts.push(x.to_vec());
        for (li, l) in layers.iter().enumerate() {
            let h = &acts[li];
            let mut z = match l.bias_offset {
                Some(b) => params[b..b + l.fan_out].to_vec(),
                None => vec![0.0; l.fan_out],
            };
            for (i, &hv) in h.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let row = &params[l.offset + i * l.fan_out..l.offset + (i + 1) * l.fan_out];
                for (zv, w) in z.iter_mut().zip(row) {
                    *zv += hv * w;
                }
            }
            let out = if li != last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pres.push(z);
            acts.push(out);
        }
        let output = acts.pop().unwrap_or_default();
        let mut delta = seed(&output);
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            if li != last {
                for (k, d) in delta.iter_mut().enumerate() {
                    *d *= self.activation.derivative(pres[li][k], acts[li + 1][k]);
                }
            }
            if delta.iter().all(|&d| d == 0.0) {
                break;
            }
            let h = &acts[li];
            if let Some(b) = l.bias_offset {
                for (k, d) in delta.iter().enumerate() {
                    grad[b + k] += d;
                }
            }
            let mut prev = if li > 0 {
                vec![0.0; l.fan_in]
            } else {
                Vec::new()
            };
            for i in 0..l.fan_in {
                let base = l.offset + i * l.fan_out;
                let hv = h[i];
                if hv != 0.0 {
                    for (k, d) in delta.iter().enumerate() {
                        grad[base + k] += hv * d;
                    }
                }
                if li > 0 {
                    let row = &params[base..base + l.fan_out];
                    prev[i] = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
            }
            delta = prev;
        }
        output
    }

    /// Graph expression of the network applied row-wise to `x` (`T x input`).
    /// `params` may be any `1 x param_count` node, leaf or expression.
    pub fn graph_forward(&self, g: &mut Graph, params: NodeId, x: NodeId) -> NodeId {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x;
        for (li, l) in layers.iter().enumerate() {
            let w = g.slice(params, l.offset, l.fan_in, l.fan_out);
            let mut z = g.matmul(h, w);
            if let Some(b) = l.bias_offset {
                let bn = g.slice(params, b, 1, l.fan_out);
                z = g.add(z, bn);
            }
            h = if li != last {
                match self.activation {
                    Activation::Relu => g.relu(z),
                    Activation::Tanh => g.tanh(z),
                }
            } else {
                z
            };
        }
        h
    }

    pub fn forward_batch(&self, params: &[f64], xs: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..xs.rows())
            .map(|r| self.forward(params, xs.row_slice(r)))
            .collect();
        if rows.is_empty() {
            return Tensor::zeros(0, self.output);
        }
        Tensor::from_rows(&rows)
    }
}

/// Flat parameter vector together with the layout that interprets it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: MlpSpec,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.layout.forward(&self.values, x)
    }
}

/// Rescales `v` in place to global l2 norm at most `max_norm`. Returns the
/// applied factor when clipping happened.
pub fn clip_global_norm(v: &mut [f64], max_norm: f64) -> Option<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        v.iter_mut().for_each(|x| *x *= s);
        Some(s)
    } else {
        None
    }
}
