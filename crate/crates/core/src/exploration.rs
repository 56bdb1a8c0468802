//! Action-selection strategies.
//!
//! Besides the classic decaying ε-greedy, Boltzmann and parameter-space-noise
//! baselines, this module implements adversarially-guided exploration (AGE):
//! with probability ε the agent samples from ζ, a Boltzmann distribution over
//! each action's adversarial gain `max_a' Q(s, a') - Q(s, a)` at temperature ε,
//! and otherwise acts greedily. Exploratory moves therefore favour the actions
//! an adversary would most like to induce.

use crate::neural::{softmax, QNetwork};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Linear decay from `initial_epsilon` to `final_epsilon` over the first
/// `exploration_fraction * total_timesteps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationSchedule {
    pub initial_epsilon: f64,
    pub final_epsilon: f64,
    pub exploration_fraction: f64,
    pub total_timesteps: u64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            initial_epsilon: 1.0,
            final_epsilon: 0.02,
            exploration_fraction: 0.1,
            total_timesteps: 100_000,
        }
    }
}

impl ExplorationSchedule {
    pub fn decay_steps(&self) -> f64 {
        self.exploration_fraction * self.total_timesteps as f64
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let horizon = self.decay_steps();
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.final_epsilon;
        }
        let frac = step as f64 / horizon;
        self.initial_epsilon + frac * (self.final_epsilon - self.initial_epsilon)
    }
}

/// Lowest index among maximal entries.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Lowest index among minimal entries.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Adversarial state-action significance over the actions of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaDistribution {
    pub probabilities: Vec<f64>,
}

/// `ζ(a) ∝ exp((max Q - Q(a)) / temperature)`, evaluated after subtracting the
/// largest gain so that no exponent is positive.
pub fn zeta_adv(q_values: &[f64], temperature: f64) -> Result<ZetaDistribution> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    let q_max = q_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = q_values
        .iter()
        .map(|&q| (q_max - q) / temperature)
        .collect();
    Ok(ZetaDistribution {
        probabilities: softmax(&scaled),
    })
}

/// Algorithm body shared by [`age_select`] and tests: `explore_draw` decides
/// the branch and `sample_draw` picks from ζ when exploring.
pub fn age_select_with_draws(
    q_values: &[f64],
    epsilon: f64,
    temperature: f64,
    explore_draw: f64,
    sample_draw: f64,
) -> Result<usize> {
    if explore_draw < epsilon {
        let zeta = zeta_adv(q_values, temperature)?;
        Ok(inverse_cdf(&zeta.probabilities, sample_draw))
    } else {
        Ok(argmax(q_values))
    }
}

fn inverse_cdf(probabilities: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// AGE with the temperature coupled to ε.
pub fn age_select(q_values: &[f64], epsilon: f64, rng: &mut SplitMix64) -> Result<usize> {
    age_select_decoupled(q_values, epsilon, epsilon, rng)
}

/// AGE with an independent temperature (ablation setting).
pub fn age_select_decoupled(
    q_values: &[f64],
    epsilon: f64,
    temperature: f64,
    rng: &mut SplitMix64,
) -> Result<usize> {
    let explore = rng.next_f64();
    let sample = rng.next_f64();
    age_select_with_draws(q_values, epsilon, temperature, explore, sample)
}

/// Exact action probabilities of AGE: `ε ζ(a) + (1 - ε) [a = argmax Q]`.
pub fn age_action_probabilities(q_values: &[f64], epsilon: f64, temperature: f64) -> Result<Vec<f64>> {
    let zeta = zeta_adv(q_values, temperature)?;
    let greedy = argmax(q_values);
    Ok(zeta
        .probabilities
        .iter()
        .enumerate()
        .map(|(a, &z)| epsilon * z + if a == greedy { 1.0 - epsilon } else { 0.0 })
        .collect())
}

pub fn eps_greedy_select(q_values: &[f64], epsilon: f64, rng: &mut SplitMix64) -> usize {
    let explore = rng.next_f64();
    let pick = rng.below(q_values.len());
    if explore < epsilon {
        pick
    } else {
        argmax(q_values)
    }
}

pub fn boltzmann_probabilities(q_values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    let scaled: Vec<f64> = q_values.iter().map(|q| q / temperature).collect();
    Ok(softmax(&scaled))
}

/// Samples `P(a) ∝ exp(Q(a) / temperature)`.
pub fn boltzmann_select(q_values: &[f64], temperature: f64, rng: &mut SplitMix64) -> Result<usize> {
    let probs = boltzmann_probabilities(q_values, temperature)?;
    Ok(inverse_cdf(&probs, rng.next_f64()))
}

/// Adaptive scale of parameter-space noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamNoiseState {
    pub sigma: f64,
    /// Target KL divergence between clean and perturbed greedy-softmax policies.
    pub threshold: f64,
    pub adaptation_factor: f64,
}

impl Default for ParamNoiseState {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            threshold: 0.0,
            adaptation_factor: 1.01,
        }
    }
}

impl ParamNoiseState {
    /// The distance an ε-greedy policy would induce, `-ln(1 - ε + ε/|A|)`.
    pub fn threshold_for_epsilon(epsilon: f64, n_actions: usize) -> f64 {
        -(1.0 - epsilon + epsilon / n_actions as f64).ln()
    }
}

/// Copy of `net` with independent `N(0, sigma^2)` noise on every parameter.
pub fn param_noise_perturb(net: &QNetwork, state: &ParamNoiseState, rng: &mut SplitMix64) -> QNetwork {
    let mut noisy = net.clone();
    for (weights, biases) in noisy.layers_mut() {
        for p in weights.iter_mut().chain(biases.iter_mut()) {
            *p += state.sigma * rng.normal();
        }
    }
    noisy
}

/// Grows sigma when the perturbed policy stays too close to the clean one,
/// shrinks it otherwise.
pub fn param_noise_adapt(state: &ParamNoiseState, action_divergence: f64) -> ParamNoiseState {
    let mut next = *state;
    if action_divergence < state.threshold {
        next.sigma *= state.adaptation_factor;
    } else {
        next.sigma /= state.adaptation_factor;
    }
    next
}

/// Mean KL divergence `KL(softmax(Q) || softmax(Q_noisy))` over a batch.
pub fn policy_divergence(clean: &QNetwork, noisy: &QNetwork, inputs: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let a = clean.forward_batch(inputs, n);
    let b = noisy.forward_batch(inputs, n);
    let k = clean.output_dim();
    let mut total = 0.0;
    for i in 0..n {
        let p = softmax(&a[i * k..(i + 1) * k]);
        let q = softmax(&b[i * k..(i + 1) * k]);
        total += p
            .iter()
            .zip(&q)
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, &qi)| pi * (pi / qi.max(1e-300)).ln())
            .sum::<f64>();
    }
    total / n as f64
}

/// Strategy names accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    EpsGreedy,
    Boltzmann,
    ParamNoise,
    Age,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::EpsGreedy => "eps_greedy",
            StrategyKind::Boltzmann => "boltzmann",
            StrategyKind::ParamNoise => "param_noise",
            StrategyKind::Age => "age",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eps_greedy" => Ok(StrategyKind::EpsGreedy),
            "boltzmann" => Ok(StrategyKind::Boltzmann),
            "param_noise" => Ok(StrategyKind::ParamNoise),
            "age" => Ok(StrategyKind::Age),
            other => Err(format!(
                "unknown strategy `{other}` (expected eps_greedy, boltzmann, param_noise or age)"
            )),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn within_four_sigma(count: usize, n: usize, p: f64) -> bool {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - n as f64 * p).abs() <= 4.0 * sigma.max(1e-9)
    }

    #[test]
    fn epsilon_schedule_points() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.epsilon_at(0), 1.0);
        assert_abs_diff_eq!(s.epsilon_at(5_000), 0.51, epsilon = 1e-12);
        assert_eq!(s.epsilon_at(10_000), 0.02);
        assert_eq!(s.epsilon_at(99_999), 0.02);
        let mut last = f64::INFINITY;
        for t in (0..20_000).step_by(37) {
            let e = s.epsilon_at(t);
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn zeta_two_actions() {
        let z = zeta_adv(&[1.0, 0.0], 1.0).unwrap();
        // Gains (0, 1): softmax gives (1/(1+e), e/(1+e)).
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(z.probabilities[0], 1.0 / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(z.probabilities[1], e / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(z.probabilities[0], 0.26894, epsilon = 1e-5);
    }

    #[test]
    fn zeta_uniform_for_equal_q() {
        let z = zeta_adv(&[2.0, 2.0, 2.0], 0.3).unwrap();
        for p in z.probabilities {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zeta_low_temperature_concentrates_on_worst() {
        let z = zeta_adv(&[1.0, 0.0], 1e-3).unwrap();
        assert!(z.probabilities[1] > 1.0 - 1e-12);
    }

    #[test]
    fn zeta_rejects_non_positive_temperature() {
        assert!(matches!(zeta_adv(&[1.0, 0.0], 0.0), Err(Error::InvalidTemperature(_))));
        assert!(zeta_adv(&[1.0, 0.0], -1.0).is_err());
        assert!(zeta_adv(&[1.0, 0.0], f64::NAN).is_err());
    }

    #[test]
    fn zeta_finite_for_huge_gaps() {
        let z = zeta_adv(&[1e6, 0.0, -3.0], 0.02).unwrap();
        assert!(z.probabilities.iter().all(|p| p.is_finite()));
        assert_abs_diff_eq!(z.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn age_forced_greedy_branch() {
        for q in [[5.0, 0.0], [0.0, 5.0]] {
            let a = age_select_with_draws(&q, 0.3, 0.3, 0.9, 0.0).unwrap();
            assert_eq!(a, argmax(&q));
        }
    }

    #[test]
    fn age_greedy_frequency() {
        let q = [5.0, 0.0];
        let eps = 0.02;
        let probs = age_action_probabilities(&q, eps, eps).unwrap();
        let zeta = zeta_adv(&q, eps).unwrap();
        assert_abs_diff_eq!(probs[0], 0.98 + 0.02 * zeta.probabilities[0], epsilon = 1e-15);
        let mut rng = SplitMix64::new(7);
        let n = 100_000;
        let greedy = (0..n)
            .filter(|_| age_select(&q, eps, &mut rng).unwrap() == 0)
            .count();
        assert!(within_four_sigma(greedy, n, probs[0]), "{greedy}");
    }

    #[test]
    fn age_ties_split_evenly() {
        let mut rng = SplitMix64::new(8);
        for eps in [0.02, 0.5, 1.0] {
            let probs = age_action_probabilities(&[1.0, 1.0], eps, eps).unwrap();
            // Ties break to action 0 on the greedy branch, so the exact split
            // is (1 - ε/2, ε/2) rather than one half each.
            assert_abs_diff_eq!(probs[0], 1.0 - eps / 2.0, epsilon = 1e-15);
            let n = 20_000;
            let zeros = (0..n)
                .filter(|_| age_select(&[1.0, 1.0], eps, &mut rng).unwrap() == 0)
                .count();
            assert!(within_four_sigma(zeros, n, probs[0]));
        }
    }

    #[test]
    fn eps_greedy_extremes_and_mixture() {
        let mut rng = SplitMix64::new(9);
        let q = [1.0, 0.0];
        assert!((0..1000).all(|_| eps_greedy_select(&q, 0.0, &mut rng) == 0));
        let n = 100_000;
        let zeros = (0..n).filter(|_| eps_greedy_select(&q, 1.0, &mut rng) == 0).count();
        assert!(within_four_sigma(zeros, n, 0.5));
        let zeros = (0..n).filter(|_| eps_greedy_select(&q, 0.5, &mut rng) == 0).count();
        assert!(within_four_sigma(zeros, n, 0.75));
    }

    #[test]
    fn boltzmann_cases() {
        let p = boltzmann_probabilities(&[1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.731, epsilon = 5e-4);
        assert_abs_diff_eq!(p[1], 0.269, epsilon = 5e-4);
        let p = boltzmann_probabilities(&[3.0, 3.0], 0.1).unwrap();
        assert_abs_diff_eq!(p[0], 0.5);
        let p = boltzmann_probabilities(&[1.0, 0.0], 1e-3).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
        let mut rng = SplitMix64::new(10);
        let n = 50_000;
        let zeros = (0..n)
            .filter(|_| boltzmann_select(&[1.0, 0.0], 1.0, &mut rng).unwrap() == 0)
            .count();
        let exact = 1.0 / (1.0 + (-1.0f64).exp());
        assert!(within_four_sigma(zeros, n, exact));
    }

    #[test]
    fn param_noise_zero_sigma_is_identity() {
        let mut rng = SplitMix64::new(11);
        let net = QNetwork::new(&[4, 8, 2], crate::neural::Activation::Tanh, &mut rng);
        let state = ParamNoiseState {
            sigma: 0.0,
            ..Default::default()
        };
        let noisy = param_noise_perturb(&net, &state, &mut rng);
        assert_eq!(noisy, net);
    }

    #[test]
    fn param_noise_perturbs_every_parameter() {
        let mut rng = SplitMix64::new(12);
        let net = QNetwork::new(&[4, 8, 2], crate::neural::Activation::Tanh, &mut rng);
        let noisy = param_noise_perturb(&net, &ParamNoiseState::default(), &mut rng);
        assert!(net.parameters().zip(noisy.parameters()).all(|(a, b)| a != b));
    }

    #[test]
    fn adaptation_rule() {
        let s = ParamNoiseState {
            sigma: 0.2,
            threshold: 0.1,
            adaptation_factor: 1.01,
        };
        let twice = param_noise_adapt(&param_noise_adapt(&s, 0.05), 0.0);
        assert_abs_diff_eq!(twice.sigma, 0.2 * 1.01 * 1.01, epsilon = 1e-15);
        let shrunk = param_noise_adapt(&s, 0.5);
        assert_abs_diff_eq!(shrunk.sigma, 0.2 / 1.01, epsilon = 1e-15);
    }

    #[test]
    fn divergence_of_identical_nets_is_zero() {
        let mut rng = SplitMix64::new(13);
        let net = QNetwork::new(&[4, 8, 2], crate::neural::Activation::Tanh, &mut rng);
        let inputs: Vec<f64> = (0..40).map(|_| rng.uniform(-1.0, 1.0)).collect();
        assert_eq!(policy_divergence(&net, &net, &inputs, 10), 0.0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in [
            StrategyKind::EpsGreedy,
            StrategyKind::Boltzmann,
            StrategyKind::ParamNoise,
            StrategyKind::Age,
        ] {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("softmax".parse::<StrategyKind>().is_err());
    }
}
