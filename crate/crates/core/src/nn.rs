//! Small dense networks with manual backpropagation.
//!
//! The policy and value networks are plain multilayer perceptrons over f64
//! slices. Gradients are computed layer by layer in closed form, optimized
//! with Adam over flattened parameter vectors, and verified against finite
//! differences in tests. No external autodiff is involved, which keeps runs
//! bit-reproducible across platforms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in whichever of (pre, post) is cheapest.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation sums per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation outputs per layer.
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("cache from a non-empty network")
    }
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Grads {
    d_weights: Vec<Vec<f64>>,
    d_bias: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Grads {
        Grads {
            d_weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.d_weights.iter_mut().chain(self.d_bias.iter_mut()) {
            for x in v.iter_mut() {
                *x *= k;
            }
        }
    }

    /// Flattens in the same order as [`Mlp::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_bias) {
            flat.extend(w);
            flat.extend(b);
        }
        flat
    }
}

impl Mlp {
    /// Builds a network with the given layer widths. Hidden layers use
    /// `hidden`, the last layer `output`. Weights and biases start uniform
    /// in +/- 1/sqrt(fan_in).
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                bias,
                activation: if i == dims.len() - 2 { output } else { hidden },
            });
        }
        Mlp { layers }
    }

    /// Shrinks the last layer's parameters, used to start policies near the
    /// neutral action.
    pub fn scale_last_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty network");
        for w in last.weights.iter_mut().chain(last.bias.iter_mut()) {
            *w *= factor;
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty network").in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a).1;
        }
        a
    }

    /// Forward pass that keeps everything needed for backpropagation.
    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut a = input.to_vec();
        for layer in &self.layers {
            cache.inputs.push(a.clone());
            let (z, out) = layer.forward(&a);
            cache.pre.push(z);
            cache.post.push(out.clone());
            a = out;
        }
        cache
    }

    /// Backpropagates `grad_output` (the loss gradient at the network
    /// output) through the cached pass. Returns parameter gradients and the
    /// gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> (Grads, Vec<f64>) {
        assert_eq!(grad_output.len(), self.output_dim());
        let mut grads = Grads::zeros_like(self);
        let mut da = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let post = &cache.post[l];
            let input = &cache.inputs[l];
            let mut dz = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                dz[o] = da[o] * layer.activation.derivative(pre[o], post[o]);
            }
            for o in 0..layer.out_dim {
                let row = &mut grads.d_weights[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, slot) in row.iter_mut().enumerate() {
                    *slot += dz[o] * input[i];
                }
                grads.d_bias[l][o] += dz[o];
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, w) in row.iter().enumerate() {
                    prev[i] += dz[o] * w;
                }
            }
            da = prev;
        }
        (grads, da)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend(&layer.weights);
            flat.extend(&layer.bias);
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for layer in &mut self.layers {
            let w_len = layer.weights.len();
            layer.weights.copy_from_slice(&flat[pos..pos + w_len]);
            pos += w_len;
            let b_len = layer.bias.len();
            layer.bias.copy_from_slice(&flat[pos..pos + b_len]);
            pos += b_len;
        }
    }

    /// Blends the online network into this target network:
    /// new = rate * online + (1 - rate) * current.
    pub fn soft_update_from(&mut self, online: &Mlp, rate: f64) {
        assert_eq!(self.param_count(), online.param_count());
        for (mine, theirs) in self.layers.iter_mut().zip(&online.layers) {
            for (t, o) in mine
                .weights
                .iter_mut()
                .chain(mine.bias.iter_mut())
                .zip(theirs.weights.iter().chain(theirs.bias.iter()))
            {
                *t = rate * o + (1.0 - rate) * *t;
            }
        }
    }
}

impl Layer {
    fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(input.len(), self.in_dim);
        let mut pre = self.bias.clone();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = 0.0;
            for (w, x) in row.iter().zip(input) {
                sum += w * x;
            }
            pre[o] += sum;
        }
        let post = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (pre, post)
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One descent step along `grads`; to ascend, pass negated gradients.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
