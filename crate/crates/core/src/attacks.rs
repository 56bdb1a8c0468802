//! Observation-perturbation adversaries under a probabilistic budget.
//!
//! At every step an attack fires with probability `p_attack`. A fired attack
//! runs iterated FGSM on the victim's Q-network: the observation moves by
//! `step_size` along the negative sign of the input gradient of the
//! cross-entropy toward the target action, projected back into an L∞ ball
//! around the true observation, until the victim's greedy action satisfies the
//! adversary's goal. With `oracle_fallback` the adversary is always successful:
//! a failed search still forces the target action.

use crate::exploration::{argmax, argmin};
use crate::neural::QNetwork;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackMode {
    /// Induce any action other than the greedy one.
    StateNeutral,
    /// Induce the action with the lowest Q-value.
    Targeted,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::StateNeutral => "state_neutral",
            AttackMode::Targeted => "targeted",
        }
    }
}

impl std::str::FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "state_neutral" => Ok(AttackMode::StateNeutral),
            "targeted" => Ok(AttackMode::Targeted),
            other => Err(format!(
                "unknown attack mode `{other}` (expected state_neutral or targeted)"
            )),
        }
    }
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub p_attack: f64,
    pub mode: AttackMode,
    pub step_size: f64,
    pub max_iterations: usize,
    pub max_linf_radius: f64,
    pub oracle_fallback: bool,
    /// Cost charged per perturbation.
    pub c_adv: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            p_attack: 0.0,
            mode: AttackMode::StateNeutral,
            step_size: 0.05,
            max_iterations: 20,
            max_linf_radius: 0.5,
            oracle_fallback: true,
            c_adv: 1.0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_attack) {
            return Err(Error::InvalidValue {
                field: "p_attack",
                reason: format!("{} is not a probability", self.p_attack),
            });
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidValue {
                field: "step_size",
                reason: "must be positive".into(),
            });
        }
        if !(self.max_linf_radius > 0.0) {
            return Err(Error::InvalidValue {
                field: "max_linf_radius",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CraftResult {
    pub perturbed_observation: Vec<f64>,
    pub induced_action: usize,
    pub success: bool,
    pub used_oracle: bool,
    pub iterations_used: usize,
}

pub fn should_attack(spec: &AttackSpec, rng: &mut SplitMix64) -> bool {
    rng.bernoulli(spec.p_attack)
}

/// The action the adversary tries to induce at `q_values`.
pub fn attack_target(mode: AttackMode, q_values: &[f64]) -> usize {
    let greedy = argmax(q_values);
    match mode {
        AttackMode::Targeted => argmin(q_values),
        AttackMode::StateNeutral => {
            // Best action other than the greedy one.
            let mut best: Option<usize> = None;
            for (a, &q) in q_values.iter().enumerate() {
                if a != greedy && best.map_or(true, |b| q > q_values[b]) {
                    best = Some(a);
                }
            }
            best.unwrap_or(greedy)
        }
    }
}

fn goal_met(mode: AttackMode, induced: usize, greedy: usize, target: usize) -> bool {
    match mode {
        AttackMode::StateNeutral => induced != greedy,
        AttackMode::Targeted => induced == target,
    }
}

/// Searches for a perturbation of `true_obs` that makes `net` act as the
/// adversary wants.
pub fn craft(spec: &AttackSpec, net: &QNetwork, true_obs: &[f64]) -> Result<CraftResult> {
    let q = net.forward(true_obs)?;
    let greedy = argmax(&q);
    let target = attack_target(spec.mode, &q);
    let mut x = true_obs.to_vec();
    let mut induced = greedy;
    let mut iterations = 0;

    if goal_met(spec.mode, greedy, greedy, target) {
        // Only reachable for targeted attacks on a constant Q row.
        return Ok(CraftResult {
            perturbed_observation: x,
            induced_action: greedy,
            success: true,
            used_oracle: false,
            iterations_used: 0,
        });
    }
    if target != greedy {
        for _ in 0..spec.max_iterations {
            iterations += 1;
            let g = net.input_gradient(&x, target)?;
            for ((xi, gi), &oi) in x.iter_mut().zip(&g).zip(true_obs) {
                let step = if *gi > 0.0 {
                    -spec.step_size
                } else if *gi < 0.0 {
                    spec.step_size
                } else {
                    0.0
                };
                *xi = (*xi + step).clamp(oi - spec.max_linf_radius, oi + spec.max_linf_radius);
            }
            induced = argmax(&net.forward(&x)?);
            if goal_met(spec.mode, induced, greedy, target) {
                return Ok(CraftResult {
                    perturbed_observation: x,
                    induced_action: induced,
                    success: true,
                    used_oracle: false,
                    iterations_used: iterations,
                });
            }
        }
    }

    if spec.oracle_fallback && target != greedy {
        return Ok(CraftResult {
            perturbed_observation: x,
            induced_action: target,
            success: true,
            used_oracle: true,
            iterations_used: iterations,
        });
    }
    Ok(CraftResult {
        perturbed_observation: x,
        induced_action: induced,
        success: false,
        used_oracle: false,
        iterations_used: iterations,
    })
}

/// What the victim sees at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttack {
    pub observed: Vec<f64>,
    pub attacked: bool,
    /// Set when the oracle forced the action.
    pub forced_action: Option<usize>,
}

/// Rolls the attack budget and, if it fires, crafts the observation.
pub fn apply_to_step(
    spec: &AttackSpec,
    net: &QNetwork,
    true_obs: &[f64],
    rng: &mut SplitMix64,
) -> Result<StepAttack> {
    if !should_attack(spec, rng) {
        return Ok(StepAttack {
            observed: true_obs.to_vec(),
            attacked: false,
            forced_action: None,
        });
    }
    let crafted = craft(spec, net, true_obs)?;
    Ok(StepAttack {
        observed: crafted.perturbed_observation,
        attacked: true,
        forced_action: crafted.used_oracle.then_some(crafted.induced_action),
    })
}
