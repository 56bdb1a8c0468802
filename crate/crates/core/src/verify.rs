//! Self-checks run by `agelab verify`: numerical gradients, the expected
//! TD-error under attack, and the properties of ζ and AGE.

use crate::harness::checkpoint::{decode, encode};
use crate::harness::csvlog::episode_rows;
use crate::replay::{Experience, ReplayBuffer, SlotRef};
use crate::trainer::{train, TrainerConfig};
use crate::exploration::{age_action_probabilities, argmax, argmin, zeta_adv};
use crate::neural::{huber, softmax, Activation, QNetwork, TrainSample};
use crate::rng::SplitMix64;
use crate::tabular::{expected_td_error, SamplingProfile, ToyMdp};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<28} {}", self.name, self.detail)
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_network(rng: &mut SplitMix64) -> QNetwork {
    let depth = 1 + rng.below(3);
    let mut dims = vec![1 + rng.below(5)];
    for _ in 0..depth {
        dims.push(2 + rng.below(6));
    }
    dims.push(2 + rng.below(3));
    let activation = if rng.bernoulli(0.5) { Activation::Tanh } else { Activation::Relu };
    let mut net = QNetwork::new(&dims, activation, rng);
    // Zero biases behind a dead ReLU layer put units exactly on the kink.
    for (_, biases) in net.layers_mut() {
        biases.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    }
    net
}

fn batch_loss(net: &QNetwork, obs: &[Vec<f64>], actions: &[usize], targets: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..obs.len() {
        let q = net.forward(&obs[i]).expect("valid input");
        total += weights[i] * huber(q[actions[i]] - targets[i]);
    }
    total / obs.len() as f64
}

fn cross_entropy(net: &QNetwork, obs: &[f64], target: usize) -> f64 {
    -softmax(&net.forward(obs).expect("valid input"))[target].ln()
}

/// Largest relative error between analytic and central-difference gradients
/// (parameters of the weighted Huber loss, and inputs of the attack loss)
/// over `n_networks` random networks.
pub fn gradient_max_relative_error(n_networks: usize, seed: u64) -> Result<f64> {
    const H: f64 = 1e-5;
    let mut rng = SplitMix64::derive(seed, "verify/gradients");
    let mut worst: f64 = 0.0;
    for _ in 0..n_networks {
        let net = random_network(&mut rng);
        let (d_in, d_out) = (net.input_dim(), net.output_dim());
        let n = 1 + rng.below(4);
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d_in).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let actions: Vec<usize> = (0..n).map(|_| rng.below(d_out)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 1.0)).collect();
        // Keep residuals away from the Huber kink at |r| = 1.
        let targets: Vec<f64> = obs
            .iter()
            .zip(&actions)
            .map(|(o, &a)| {
                let q = net.forward(o).expect("valid input")[a];
                let offset = if rng.bernoulli(0.5) { rng.uniform(0.1, 0.8) } else { rng.uniform(1.3, 3.0) };
                q + if rng.bernoulli(0.5) { offset } else { -offset }
            })
            .collect();
        let samples: Vec<TrainSample> = (0..n)
            .map(|i| TrainSample {
                observation: &obs[i],
                action: actions[i],
                target: targets[i],
                weight: weights[i],
            })
            .collect();
        let analytic: Vec<f64> = net.loss_and_gradients(&samples)?.gradients.iter().collect();
        let mut index = 0;
        for layer in 0..net.layers().len() {
            let count = net.layers()[layer].weights.len() + net.layers()[layer].biases.len();
            for k in 0..count {
                let probe = |delta: f64| {
                    let mut p = net.clone();
                    let (w, b) = p.layers_mut().nth(layer).expect("layer exists");
                    if k < w.len() {
                        w[k] += delta;
                    } else {
                        b[k - w.len()] += delta;
                    }
                    batch_loss(&p, &obs, &actions, &targets, &weights)
                };
                let numeric = (probe(H) - probe(-H)) / (2.0 * H);
                worst = worst.max(relative_error(analytic[index], numeric));
                index += 1;
            }
        }
        let target = rng.below(d_out);
        let dx = net.input_gradient(&obs[0], target)?;
        for i in 0..d_in {
            let mut plus = obs[0].clone();
            let mut minus = obs[0].clone();
            plus[i] += H;
            minus[i] -= H;
            let numeric = (cross_entropy(&net, &plus, target) - cross_entropy(&net, &minus, target)) / (2.0 * H);
            worst = worst.max(relative_error(dx[i], numeric));
        }
    }
    Ok(worst)
}

/// The expected TD-error as a sum over the two kinds of stored experience,
/// written without reference to the library formula.
fn td_error_by_enumeration(
    mdp: &ToyMdp,
    values: &[f64],
    p_s: f64,
    p_attack: f64,
    s: usize,
    a: usize,
    nominal_next: usize,
    attacked_next: usize,
) -> f64 {
    let kinds = [(p_attack, attacked_next), (p_s - p_attack, nominal_next)];
    let mut expected = 0.0;
    for (weight, next) in kinds {
        expected += weight * (mdp.reward(s, a, next) + mdp.gamma() * values[next]);
    }
    expected - values[s]
}

/// Largest absolute difference between [`expected_td_error`] and the
/// enumeration form over random instances, and the largest difference from
/// the plain TD error when no experience is attacked.
pub fn td_error_oracle_gap(instances: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = SplitMix64::derive(seed, "verify/td-error");
    let mdps = [ToyMdp::chain(5, 0.9)?, ToyMdp::gridworld(0.95)?];
    let (mut gap, mut clean_gap): (f64, f64) = (0.0, 0.0);
    for i in 0..instances {
        let mdp = &mdps[i % mdps.len()];
        let n = mdp.n_states();
        let values: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        let p_s: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let p_attack: Vec<f64> = p_s.iter().map(|&p| p * rng.next_f64()).collect();
        let profile = SamplingProfile::new(p_s.clone(), p_attack.clone())?;
        let (s, a) = (rng.below(n), rng.below(mdp.n_actions()));
        let (nominal, attacked) = (rng.below(n), rng.below(n));
        let lib = expected_td_error(&profile, mdp, &values, s, a, nominal, attacked)?;
        let oracle = td_error_by_enumeration(mdp, &values, p_s[s], p_attack[s], s, a, nominal, attacked);
        gap = gap.max((lib - oracle).abs());

        let mut only_s = vec![0.0; n];
        only_s[s] = 1.0;
        let none = SamplingProfile::new(only_s, vec![0.0; n])?;
        let lib = expected_td_error(&none, mdp, &values, s, a, nominal, attacked)?;
        let plain = mdp.reward(s, a, nominal) + mdp.gamma() * values[nominal] - values[s];
        clean_gap = clean_gap.max((lib - plain).abs());
    }
    Ok((gap, clean_gap))
}

/// AGE probabilities by enumerating both branches of the sampler.
fn age_by_enumeration(q: &[f64], epsilon: f64, temperature: f64) -> Vec<f64> {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q.iter().map(|&v| ((best - v) / temperature).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut greedy = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[greedy] {
            greedy = i;
        }
    }
    let mut out: Vec<f64> = weights.iter().map(|w| epsilon * w / z).collect();
    out[greedy] += 1.0 - epsilon;
    out
}

/// Failures of the ζ properties over random Q vectors, as messages.
pub fn zeta_property_failures(trials: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = SplitMix64::derive(seed, "verify/zeta");
    let mut failures = Vec::new();
    for t in 0..trials {
        let k = [2, 3, 5][t % 3];
        let q: Vec<f64> = (0..k).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let temperature = rng.uniform(0.05, 2.0);
        let zeta = zeta_adv(&q, temperature)?.probabilities;
        let sum: f64 = zeta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || zeta.iter().any(|&p| p < 0.0) {
            failures.push(format!("normalization: sum {sum}"));
        }
        if argmax(&zeta) != argmin(&q) {
            failures.push(format!("argmax ζ != argmin Q for {q:?}"));
        }
        let shift = rng.uniform(-100.0, 100.0);
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let zs = zeta_adv(&shifted, temperature)?.probabilities;
        if zeta.iter().zip(&zs).any(|(a, b)| (a - b).abs() > 1e-9) {
            failures.push(format!("shift by {shift} changed ζ"));
        }
        let cold = zeta_adv(&q, 1e-4)?.probabilities;
        if cold[argmin(&q)] < 1.0 - 1e-6 {
            failures.push(format!("low temperature mass {} on argmin", cold[argmin(&q)]));
        }
        let epsilon = rng.next_f64();
        let lib = age_action_probabilities(&q, epsilon, temperature)?;
        let oracle = age_by_enumeration(&q, epsilon, temperature);
        if lib.iter().zip(&oracle).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("AGE {lib:?} != {oracle:?}"));
        }
    }
    Ok(failures)
}

/// Largest gap between the sum-tree root and the directly summed
/// `priority^alpha` after random pushes and priority updates.
pub fn sum_tree_drift(operations: usize, seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::derive(seed, "verify/sum-tree");
    let alpha = 0.6;
    let mut buffer = ReplayBuffer::prioritized(37, alpha);
    let mut worst: f64 = 0.0;
    for _ in 0..operations {
        if buffer.is_empty() || rng.bernoulli(0.5) {
            buffer.push(Experience {
                state: vec![rng.next_f64()],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: false,
                perturbed: rng.bernoulli(0.3),
            });
        } else {
            let slot = rng.below(buffer.len());
            let seq = buffer.seq_of(slot).expect("stored slot");
            buffer.update_priorities(&[SlotRef { slot, seq }], &[rng.uniform(-3.0, 3.0)])?;
        }
        let direct: f64 = (0..buffer.len())
            .map(|i| buffer.priority(i).expect("stored slot").powf(alpha))
            .sum();
        let root = buffer.priority_mass().expect("prioritized");
        worst = worst.max((root - direct).abs() / direct);
    }
    Ok(worst)
}

/// Networks whose checkpoint does not decode to an identical network.
pub fn checkpoint_mismatches(networks: usize, seed: u64) -> usize {
    let mut rng = SplitMix64::derive(seed, "verify/checkpoint");
    (0..networks)
        .filter(|_| {
            let net = random_network(&mut rng);
            decode(&encode(&net)).ok().as_ref() != Some(&net)
        })
        .count()
}

/// Whether two short training runs with the same seed log identical episodes.
pub fn short_runs_identical(steps: u64, seed: u64) -> Result<bool> {
    let config = TrainerConfig {
        total_timesteps: steps,
        first_learning_step: steps / 4,
        ..TrainerConfig::default()
    };
    let (a_net, a) = train(config.clone(), seed)?;
    let (b_net, b) = train(config, seed)?;
    Ok(a_net == b_net && episode_rows(&a) == episode_rows(&b))
}

pub fn run_checks(seed: u64) -> Result<Vec<Check>> {
    let grad = gradient_max_relative_error(100, seed)?;
    let (gap, clean) = td_error_oracle_gap(1000, seed)?;
    let zeta = zeta_property_failures(300, seed)?;
    let drift = sum_tree_drift(2000, seed)?;
    let bad_checkpoints = checkpoint_mismatches(50, seed);
    let identical = short_runs_identical(3000, seed)?;
    Ok(vec![
        Check {
            name: "gradients vs differences",
            passed: grad < 1e-4,
            detail: format!("max relative error {grad:.2e} over 100 networks"),
        },
        Check {
            name: "expected TD-error oracle",
            passed: gap < 1e-12 && clean == 0.0,
            detail: format!("max gap {gap:.2e}, no-attack gap {clean:.2e}"),
        },
        Check {
            name: "ζ and AGE properties",
            passed: zeta.is_empty(),
            detail: if zeta.is_empty() {
                "300 random Q vectors".to_string()
            } else {
                zeta.join("; ")
            },
        },
        Check {
            name: "sum-tree mass",
            passed: drift < 1e-9,
            detail: format!("max relative drift {drift:.2e} over 2000 operations"),
        },
        Check {
            name: "checkpoint round trip",
            passed: bad_checkpoints == 0,
            detail: format!("{bad_checkpoints} of 50 networks differ"),
        },
        Check {
            name: "seeded determinism",
            passed: identical,
            detail: "two 3000-step runs, same seed".to_string(),
        },
    ])
}
