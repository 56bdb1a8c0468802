//! Reference computations written independently of the library.
#![allow(dead_code)]

use agelab::neural::{Activation, QNetwork};
use agelab::rng::SplitMix64;
use agelab::tabular::ToyMdp;
use nalgebra::{DMatrix, DVector};

pub fn huber_ref(r: f64) -> f64 {
    if r.abs() <= 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

/// Plain forward pass from the public layer data.
pub fn forward_ref(net: &QNetwork, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = net.layers().len();
    for (i, l) in net.layers().iter().enumerate() {
        let mut out = l.biases.clone();
        for o in 0..l.outputs {
            for j in 0..l.inputs {
                out[o] += l.weights[o * l.inputs + j] * h[j];
            }
        }
        if i + 1 < n {
            for v in &mut out {
                *v = match net.activations()[i] {
                    Activation::Tanh => v.tanh(),
                    Activation::Relu => v.max(0.0),
                };
            }
        }
        h = out;
    }
    h
}

pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn batch_loss_ref(net: &QNetwork, b: &Batch) -> f64 {
    let n = b.obs.len() as f64;
    (0..b.obs.len())
        .map(|i| b.weights[i] * huber_ref(forward_ref(net, &b.obs[i])[b.actions[i]] - b.targets[i]))
        .sum::<f64>()
        / n
}

pub fn cross_entropy_ref(net: &QNetwork, x: &[f64], target: usize) -> f64 {
    let q = forward_ref(net, x);
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + q.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    log_z - q[target]
}

/// Central differences of the batch loss with respect to every parameter,
/// ordered layer by layer, weights before biases.
pub fn parameter_gradient_fd(net: &QNetwork, b: &Batch, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in 0..net.layers().len() {
        let count = net.layers()[layer].weights.len() + net.layers()[layer].biases.len();
        for k in 0..count {
            let eval = |d: f64| {
                let mut p = net.clone();
                let (w, bias) = p.layers_mut().nth(layer).unwrap();
                if k < w.len() {
                    w[k] += d;
                } else {
                    bias[k - w.len()] += d;
                }
                batch_loss_ref(&p, b)
            };
            out.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    out
}

pub fn input_gradient_fd(net: &QNetwork, x: &[f64], target: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (cross_entropy_ref(net, &plus, target) - cross_entropy_ref(net, &minus, target)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A small network with random shape, activation and nonzero biases.
pub fn random_network(rng: &mut SplitMix64) -> QNetwork {
    let hidden = 1 + rng.below(2);
    let mut dims = vec![1 + rng.below(4)];
    for _ in 0..hidden {
        dims.push(2 + rng.below(5));
    }
    dims.push(2 + rng.below(3));
    let act = if rng.bernoulli(0.5) { Activation::Tanh } else { Activation::Relu };
    let mut net = QNetwork::new(&dims, act, rng);
    for (_, b) in net.layers_mut() {
        b.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
    }
    net
}

/// A batch whose residuals stay clear of the Huber kink.
pub fn random_batch(net: &QNetwork, rng: &mut SplitMix64) -> Batch {
    let n = 1 + rng.below(4);
    let obs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..net.input_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let actions: Vec<usize> = (0..n).map(|_| rng.below(net.output_dim())).collect();
    let weights = (0..n).map(|_| rng.uniform(0.2, 1.0)).collect();
    let targets = obs
        .iter()
        .zip(&actions)
        .map(|(o, &a)| {
            let mag = if rng.bernoulli(0.5) { rng.uniform(0.1, 0.8) } else { rng.uniform(1.3, 3.0) };
            forward_ref(net, o)[a] + if rng.bernoulli(0.5) { mag } else { -mag }
        })
        .collect();
    Batch {
        obs,
        actions,
        targets,
        weights,
    }
}

/// Expected TD-error summed over the attacked and nominal experience
/// populations of state `s`.
#[allow(clippy::too_many_arguments)]
pub fn td_error_ref(
    mdp: &ToyMdp,
    v: &[f64],
    p_s: f64,
    p_attack: f64,
    s: usize,
    a: usize,
    nominal: usize,
    attacked: usize,
) -> f64 {
    let g = mdp.gamma();
    let attacked_term = p_attack * (mdp.reward(s, a, attacked) + g * v[attacked]);
    let nominal_term = (p_s - p_attack) * (mdp.reward(s, a, nominal) + g * v[nominal]);
    attacked_term + nominal_term - v[s]
}

/// ζ from unshifted exponentials of `-Q / T`.
pub fn zeta_ref(q: &[f64], t: f64) -> Vec<f64> {
    let e: Vec<f64> = q.iter().map(|v| (-v / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// AGE selection probabilities by enumerating the explore branch (each
/// action weighted by ζ) and the greedy branch (lowest-index maximizer).
pub fn age_brute_force(q: &[f64], eps: f64, t: f64) -> Vec<f64> {
    let zeta = zeta_ref(q, t);
    let mut probs = vec![0.0; q.len()];
    for (a, z) in zeta.iter().enumerate() {
        probs[a] += eps * z;
    }
    let greedy = (0..q.len()).fold(0, |best, a| if q[a] > q[best] { a } else { best });
    probs[greedy] += 1.0 - eps;
    probs
}

/// `V^π` by a dense linear solve, terminal states fixed at zero.
pub fn policy_value_ref(mdp: &ToyMdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.n_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.is_terminal(s) {
            continue;
        }
        let row = mdp.transition_row(s, policy[s]);
        for (t, &p) in row.iter().enumerate() {
            a[(s, t)] -= mdp.gamma() * p;
            b[s] += p * mdp.reward(s, policy[s], t);
        }
    }
    a.lu().solve(&b).expect("non-singular").iter().copied().collect()
}

/// Optimal values by brute force over all deterministic policies.
pub fn optimal_values_brute_force(mdp: &ToyMdp) -> Vec<f64> {
    let n = mdp.n_states();
    let k = mdp.n_actions();
    let total = k.pow(n as u32);
    let mut best = vec![f64::NEG_INFINITY; n];
    for code in 0..total {
        let mut c = code;
        let policy: Vec<usize> = (0..n)
            .map(|_| {
                let a = c % k;
                c /= k;
                a
            })
            .collect();
        for (b, v) in best.iter_mut().zip(policy_value_ref(mdp, &policy)) {
            *b = b.max(v);
        }
    }
    best
}
