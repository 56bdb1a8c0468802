//! Fully-connected Q-value approximator with hand-written backpropagation.
//!
//! Weights are stored row-major with shape `outputs x inputs`, which is also the
//! order used by the `AGEQ` checkpoint format. Hidden layers apply `tanh` or a
//! rectifier; the output layer is linear.

use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}` (expected tanh or relu)")),
        }
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
    }

    /// `out[b] = W x[b] + bias` for a batch laid out row by row.
    fn affine_batch(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.outputs);
        for b in 0..n {
            let xb = &x[b * self.inputs..(b + 1) * self.inputs];
            for o in 0..self.outputs {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(self.biases[o] + dot(row, xb));
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradient arrays congruent with a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for l in &mut self.layers {
                l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|g| *g *= scale);
            }
        }
        norm
    }
}

/// One regression example for the Q-learning loss.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub target: f64,
    /// Importance weight; 1 for uniform replay.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub gradients: Gradients,
    /// `Q(s, a) - target` per batch entry.
    pub residuals: Vec<f64>,
}

pub fn huber(residual: f64) -> f64 {
    let a = residual.abs();
    if a <= HUBER_DELTA {
        0.5 * residual * residual
    } else {
        HUBER_DELTA * (a - 0.5 * HUBER_DELTA)
    }
}

fn huber_derivative(residual: f64) -> f64 {
    residual.clamp(-HUBER_DELTA, HUBER_DELTA)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
    /// One tag per hidden layer.
    activations: Vec<Activation>,
}

impl QNetwork {
    /// Glorot-uniform weights and zero biases.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut SplitMix64) -> Self {
        assert!(dims.len() >= 2, "a network needs an input and an output size");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.uniform(-limit, limit))
                        .collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Self {
            layers,
            activations: vec![activation; dims.len() - 2],
        }
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        assert!(dims.len() >= 2, "a network needs an input and an output size");
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activations: vec![activation; dims.len() - 2],
        }
    }

    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidValue {
                field: "layers",
                reason: "at least one layer is required".into(),
            });
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::InvalidValue {
                field: "activations",
                reason: format!(
                    "{} hidden layers need {} activations, got {}",
                    layers.len() - 1,
                    layers.len() - 1,
                    activations.len()
                ),
            });
        }
        for (i, l) in layers.iter().enumerate() {
            let chained = i == 0 || layers[i - 1].outputs == l.inputs;
            if !chained
                || l.weights.len() != l.inputs * l.outputs
                || l.biases.len() != l.outputs
            {
                return Err(Error::ShapeMismatch { layer: i });
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to parameters; shapes must be left untouched.
    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers
            .iter_mut()
            .map(|l| (&mut l.weights, &mut l.biases))
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn check_input(&self, observation: &[f64]) -> Result<()> {
        if observation.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: observation.len(),
            });
        }
        Ok(())
    }

    /// Q-values for one observation.
    pub fn forward(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.check_input(observation)?;
        Ok(self.forward_batch(observation, 1))
    }

    /// Q-values for `n` observations stored contiguously; returns `n x |A|`.
    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(inputs.len(), n * self.input_dim());
        let mut x = inputs.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.affine_batch(&x, n);
            if let Some(act) = self.activations.get(i) {
                x.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        x
    }

    /// Layer inputs for every layer plus the final output.
    fn trace(&self, inputs: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine_batch(&acts[i], n);
            if let Some(act) = self.activations.get(i) {
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `delta = dL/d(output)`; returns parameter and input gradients.
    fn backward(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, n: usize) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[l];
            let g = &mut grads.layers[l];
            let mut dx = vec![0.0; n * layer.inputs];
            for b in 0..n {
                let xb = &x[b * layer.inputs..(b + 1) * layer.inputs];
                let dxb = &mut dx[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[b * layer.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    axpy(d, xb, &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs]);
                    axpy(d, &layer.weights[o * layer.inputs..(o + 1) * layer.inputs], dxb);
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                for (d, &y) in dx.iter_mut().zip(x) {
                    *d *= act.derivative_from_output(y);
                }
            }
            delta = dx;
        }
        (grads, delta)
    }

    /// Mean importance-weighted Huber loss of `Q(s, a)` against the targets.
    pub fn loss_and_gradients(&self, batch: &[TrainSample<'_>]) -> Result<LossOutput> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = batch.len();
        let n_actions = self.output_dim();
        let mut inputs = Vec::with_capacity(n * self.input_dim());
        for sample in batch {
            self.check_input(sample.observation)?;
            if sample.action >= n_actions {
                return Err(Error::InvalidAction {
                    action: sample.action,
                    n_actions,
                });
            }
            inputs.extend_from_slice(sample.observation);
        }
        let acts = self.trace(&inputs, n);
        let q = &acts[acts.len() - 1];
        let mut delta = vec![0.0; n * n_actions];
        let mut residuals = Vec::with_capacity(n);
        let mut loss = 0.0;
        for (b, sample) in batch.iter().enumerate() {
            let r = q[b * n_actions + sample.action] - sample.target;
            residuals.push(r);
            loss += sample.weight * huber(r);
            delta[b * n_actions + sample.action] = sample.weight * huber_derivative(r) / n as f64;
        }
        let (gradients, _) = self.backward(&acts, delta, n);
        Ok(LossOutput {
            loss: loss / n as f64,
            gradients,
            residuals,
        })
    }

    /// Gradient w.r.t. the observation of the cross-entropy between
    /// `softmax(Q(s, .))` and the one-hot `target_action`.
    pub fn input_gradient(&self, observation: &[f64], target_action: usize) -> Result<Vec<f64>> {
        self.check_input(observation)?;
        let n_actions = self.output_dim();
        if target_action >= n_actions {
            return Err(Error::InvalidAction {
                action: target_action,
                n_actions,
            });
        }
        let acts = self.trace(observation, 1);
        let mut delta = softmax(&acts[acts.len() - 1]);
        delta[target_action] -= 1.0;
        let (_, dx) = self.backward(&acts, delta, 1);
        Ok(dx)
    }

    /// `self <- tau * source + (1 - tau) * self`; `tau = 1` is a hard copy.
    pub fn soft_update_from(&mut self, source: &QNetwork, tau: f64) -> Result<()> {
        for (i, (dst, src)) in self.layers.iter_mut().zip(&source.layers).enumerate() {
            if !dst.same_shape(src) {
                return Err(Error::ShapeMismatch { layer: i });
            }
        }
        if self.layers.len() != source.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: self.layers.len().min(source.layers.len()),
            });
        }
        if tau == 1.0 {
            self.clone_from(source);
            return Ok(());
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = tau * s + (1.0 - tau) * *d;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl Adam {
    pub fn new(net: &QNetwork, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }

    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: grads.layers.len().min(net.layers.len()),
            });
        }
        for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
            if !g.same_shape(l) || !self.first_moment.layers[i].same_shape(l) {
                return Err(Error::ShapeMismatch { layer: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let m = &mut self.first_moment.layers[i];
            let v = &mut self.second_moment.layers[i];
            update(&mut layer.weights, &grads.layers[i].weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &grads.layers[i].biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}
