//! Browser bindings: ζ and AGE action probabilities, the tabular attack
//! threshold, and a CartPole learner that can be watched under attack.

use agelab::attacks::{apply_to_step, AttackMode, AttackSpec};
use agelab::cartpole::{CartPole, CartPoleEnv};
use agelab::exploration::{age_action_probabilities, argmax, zeta_adv, StrategyKind};
use agelab::rng::SplitMix64;
use agelab::tabular::{tabular_attack_experiment, TabularConfig, ToyMdp};
use agelab::trainer::{Trainer, TrainerConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// ζ over the actions followed by the AGE selection probabilities.
#[wasm_bindgen]
pub fn exploration_probabilities(q_values: Vec<f64>, epsilon: f64, temperature: f64) -> Result<Vec<f64>, JsError> {
    let mut out = zeta_adv(&q_values, temperature).map_err(js_err)?.probabilities;
    out.extend(age_action_probabilities(&q_values, epsilon, temperature).map_err(js_err)?);
    Ok(out)
}

/// Fraction of seeds whose tabular learner ends on the optimal policy, for
/// each attack probability `0, 0.1, ..., 1`.
#[wasm_bindgen]
pub fn threshold_curve(mdp: &str, mode: &str, seeds: u32, episodes: u32) -> Result<Vec<f64>, JsError> {
    let mdp = match mdp {
        "chain" => ToyMdp::chain(5, 0.9),
        "gridworld" => ToyMdp::gridworld(0.9),
        other => return Err(JsError::new(&format!("unknown MDP `{other}`"))),
    }
    .map_err(js_err)?;
    let mode: AttackMode = mode.parse().map_err(|e: String| JsError::new(&e))?;
    let config = TabularConfig {
        episodes: episodes as usize,
        ..TabularConfig::default()
    };
    (0..=10)
        .map(|k| {
            let p = k as f64 / 10.0;
            let mut hits = 0;
            for seed in 0..seeds as u64 {
                let rng = SplitMix64::derive(seed, &format!("web/{}/{p}", mdp.name()));
                if tabular_attack_experiment(&mdp, p, mode, &config, rng).map_err(js_err)?.converged {
                    hits += 1;
                }
            }
            Ok(hits as f64 / seeds.max(1) as f64)
        })
        .collect()
}

/// A DQN learner trained a few steps at a time.
#[wasm_bindgen]
pub struct Learner {
    trainer: Trainer<CartPoleEnv>,
}

#[wasm_bindgen]
impl Learner {
    #[wasm_bindgen(constructor)]
    pub fn new(strategy: &str, seed: u64) -> Result<Learner, JsError> {
        let strategy: StrategyKind = strategy.parse().map_err(|e: String| JsError::new(&e))?;
        let config = TrainerConfig {
            strategy,
            record_steps: false,
            ..TrainerConfig::default()
        };
        let trainer = Trainer::new(config, CartPoleEnv::new(), seed).map_err(js_err)?;
        Ok(Learner { trainer })
    }

    pub fn train(&mut self, steps: u32) -> Result<(), JsError> {
        self.trainer.run_steps(steps as u64).map_err(js_err)
    }

    pub fn steps(&self) -> u64 {
        self.trainer.steps()
    }

    pub fn episode_rewards(&self) -> Vec<f64> {
        self.trainer.log().episode_rewards()
    }

    /// One greedy episode with observations attacked at rate `p_attack`;
    /// returns `[cart position, pole angle, attacked]` per step.
    pub fn rollout(&self, p_attack: f64, mode: &str, seed: u64) -> Result<Vec<f64>, JsError> {
        let mode: AttackMode = mode.parse().map_err(|e: String| JsError::new(&e))?;
        let spec = AttackSpec {
            p_attack,
            mode,
            ..AttackSpec::default()
        };
        spec.validate().map_err(js_err)?;
        let net = self.trainer.online();
        let env = CartPole::default();
        let mut rng = SplitMix64::derive(seed, "web/rollout");
        let mut state = env.reset(&mut rng);
        let mut out = Vec::new();
        while !state.is_terminal() {
            let obs = state.observation();
            let step = apply_to_step(&spec, net, &obs, &mut rng).map_err(js_err)?;
            let action = match step.forced_action {
                Some(a) => a,
                None => argmax(&net.forward(&step.observed).map_err(js_err)?),
            };
            out.extend([state.cart_position, state.pole_angle, f64::from(u8::from(step.attacked))]);
            state = env.step(&state, action).map_err(js_err)?.next_state;
        }
        Ok(out)
    }
}
