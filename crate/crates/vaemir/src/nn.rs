//! Minimal dense feed-forward network engine with analytic gradients and Adam.
//!
//! Layers are affine transforms (`z = Wx + b`) followed by ReLU or identity.
//! Weights are row-major `(out_dim, in_dim)`. All training in this crate runs
//! through [`Network::forward_trace`] / [`Network::backward`] plus
//! [`adam_step`]; there is no autodiff graph.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Deterministic generator used everywhere; seeded from a u64 so the same
/// seed reproduces the same stream on every platform.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. ReLU' at exactly 0 is 0.
    fn derivative<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Identity => F::one(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DenseLayer<F> {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major, shape (out_dim, in_dim).
    pub weights: Vec<F>,
    pub biases: Vec<F>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<F>,
        biases: Vec<F>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be >= 1, got {in_dim}x{out_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dimension("layer weights", in_dim * out_dim, weights.len()));
        }
        if biases.len() != out_dim {
            return Err(Error::dimension("layer biases", out_dim, biases.len()));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    /// `z = Wx + b` into `pre`, activated values into `out`.
    fn forward_into(&self, x: &[F], pre: &mut Vec<F>, out: &mut Vec<F>) {
        pre.clear();
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                z = z + *w * *xi;
            }
            pre.push(z);
            out.push(self.activation.apply(z));
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Network<F> {
    pub layers: Vec<DenseLayer<F>>,
}

/// Cached activations from one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    input: Vec<F>,
    /// Pre-activations per layer.
    pre: Vec<Vec<F>>,
    /// Post-activation outputs per layer.
    out: Vec<Vec<F>>,
}

impl<F: Clone> ForwardTrace<F> {
    pub fn output(&self) -> &[F] {
        self.out.last().expect("trace has at least one layer")
    }
}

/// Parameter gradients shaped like the network, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    /// Per layer: (d/dweights row-major, d/dbiases).
    pub layers: Vec<(Vec<F>, Vec<F>)>,
    pub input: Vec<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![F::zero(); l.weights.len()], vec![F::zero(); l.biases.len()]))
                .collect(),
            input: vec![F::zero(); net.layers.first().map_or(0, |l| l.in_dim)],
        }
    }

    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, o) in w.iter_mut().zip(ow) {
                *a = *a + *o;
            }
            for (a, o) in b.iter_mut().zip(ob) {
                *a = *a + *o;
            }
        }
        for (a, o) in self.input.iter_mut().zip(&other.input) {
            *a = *a + *o;
        }
    }

    pub fn scale(&mut self, c: F) {
        for (w, b) in &mut self.layers {
            for a in w.iter_mut() {
                *a = *a * c;
            }
            for a in b.iter_mut() {
                *a = *a * c;
            }
        }
        for a in &mut self.input {
            *a = *a * c;
        }
    }

    /// Flat view matching [`Network::get_param`] indexing.
    pub fn flat(&self) -> Vec<F> {
        let mut v = Vec::new();
        for (w, b) in &self.layers {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v
    }
}

impl<F: Scalar> Network<F> {
    pub fn new(layers: Vec<DenseLayer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            if layers[i].in_dim != layers[i - 1].out_dim {
                return Err(Error::dimension(
                    format!("layer {i} input"),
                    layers[i - 1].out_dim,
                    layers[i].in_dim,
                ));
            }
        }
        Ok(Network { layers })
    }

    /// Glorot-uniform weights with bound `sqrt(6 / (in + out))`, zero biases.
    ///
    /// `dims` lists layer widths including the input, so `dims.len() - 1`
    /// layers are created; `activations` has one entry per created layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("need at least input and output dims".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::dimension("activations", dims.len() - 1, activations.len()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, &act) in activations.iter().enumerate() {
            let (nin, nout) = (dims[i], dims[i + 1]);
            if nin == 0 || nout == 0 {
                return Err(Error::Config(format!("layer dims must be >= 1, got {nin}x{nout}")));
            }
            let bound = F::c(6.0 / (nin + nout) as f64).sqrt();
            let weights: Vec<F> = (0..nin * nout)
                .map(|_| F::sample_uniform(rng, -bound, bound))
                .collect();
            layers.push(DenseLayer::new(nin, nout, act, weights, vec![F::zero(); nout])?);
        }
        Network::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        Ok(self.forward_trace(x)?.out.pop().unwrap())
    }

    pub fn forward_trace(&self, x: &[F]) -> Result<ForwardTrace<F>> {
        if x.len() != self.input_dim() {
            return Err(Error::dimension("network input (layer 0)", self.input_dim(), x.len()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let mut p = Vec::new();
            let mut o = Vec::new();
            layer.forward_into(cur, &mut p, &mut o);
            pre.push(p);
            out.push(o);
            cur = out.last().unwrap();
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            out,
        })
    }

    /// Chain rule over the cached trace. `upstream` is dL/d(output).
    pub fn backward(&self, trace: &ForwardTrace<F>, upstream: &[F]) -> Result<Gradients<F>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dimension("upstream gradient", self.output_dim(), upstream.len()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[i];
            let layer_in: &[F] = if i == 0 { &trace.input } else { &trace.out[i - 1] };
            // dL/dz = dL/dy * act'(z)
            let dz: Vec<F> = delta
                .iter()
                .zip(pre)
                .map(|(d, z)| *d * layer.activation.derivative(*z))
                .collect();
            let (gw, gb) = &mut grads.layers[i];
            for o in 0..layer.out_dim {
                gb[o] = dz[o];
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(layer_in) {
                    *g = dz[o] * *xi;
                }
            }
            let mut dx = vec![F::zero(); layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d = *d + dz[o] * *w;
                }
            }
            delta = dx;
        }
        grads.input = delta;
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn get_param(&self, mut idx: usize) -> F {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: F) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = v;
                return;
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                l.biases[idx] = v;
                return;
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Network<F> = serde_json::from_str(s)?;
        Network::new(net.layers)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AdamState<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub step_count: u64,
    /// First and second moment accumulators, flat over the parameters.
    m: Vec<F>,
    v: Vec<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(learning_rate: F, param_count: usize) -> Result<Self> {
        Self::with_betas(learning_rate, F::c(0.9), F::c(0.999), F::c(1e-8), param_count)
    }

    pub fn with_betas(
        learning_rate: F,
        beta1: F,
        beta2: F,
        epsilon: F,
        param_count: usize,
    ) -> Result<Self> {
        if learning_rate <= F::zero() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if beta1 <= F::zero() || beta1 >= F::one() || beta2 <= F::zero() || beta2 >= F::one() {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        if epsilon <= F::zero() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            m: vec![F::zero(); param_count],
            v: vec![F::zero(); param_count],
        })
    }
}

/// Standard Adam update with bias correction; increments `step_count`.
pub fn adam_step<F: Scalar>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    let flat = grads.flat();
    if flat.len() != state.m.len() || flat.len() != net.param_count() {
        return Err(Error::dimension("adam gradients", state.m.len(), flat.len()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = F::one() - state.beta1.powi(t);
    let bc2 = F::one() - state.beta2.powi(t);
    for (i, g) in flat.iter().enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (F::one() - state.beta1) * *g;
        state.v[i] = state.beta2 * state.v[i] + (F::one() - state.beta2) * *g * *g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let p = net.get_param(i);
        net.set_param(i, p - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon));
    }
    Ok(())
}
