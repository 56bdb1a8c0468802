//! Cart-pole balancing task.
//!
//! Two discrete actions push the cart left (`0`) or right (`1`) with a fixed
//! force. Every step yields a reward of `+1`. An episode ends when the pole
//! leans more than 12 degrees, the cart leaves `[-2.4, 2.4]`, or 500 steps have
//! elapsed. Dynamics are integrated with explicit Euler at `tau = 0.02 s`.

use crate::env::{Environment, Transition};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub type Observation = [f64; 4];

pub const ACTION_LEFT: usize = 0;
pub const ACTION_RIGHT: usize = 1;
pub const N_ACTIONS: usize = 2;
pub const MAX_EPISODE_STEPS: u32 = 500;

/// Termination angle, 12 degrees.
pub const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const POSITION_LIMIT: f64 = 2.4;
/// Observation-space bounds: cart position and pole angle (24 degrees).
pub const OBS_POSITION_BOUND: f64 = 4.8;
pub const OBS_ANGLE_BOUND: f64 = 24.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub cart_position: f64,
    pub cart_velocity: f64,
    /// Radians, positive when leaning right.
    pub pole_angle: f64,
    /// Angular velocity of the pole in rad/s.
    pub pole_tip_velocity: f64,
    pub step_count: u32,
}

impl EnvState {
    pub fn from_observation(obs: Observation, step_count: u32) -> Self {
        Self {
            cart_position: obs[0],
            cart_velocity: obs[1],
            pole_angle: obs[2],
            pole_tip_velocity: obs[3],
            step_count,
        }
    }

    pub fn observation(&self) -> Observation {
        [
            self.cart_position,
            self.cart_velocity,
            self.pole_angle,
            self.pole_tip_velocity,
        ]
    }

    /// The pole fell or the cart left the track.
    pub fn is_failure(&self) -> bool {
        self.pole_angle.abs() > ANGLE_LIMIT || self.cart_position.abs() > POSITION_LIMIT
    }

    pub fn is_terminal(&self) -> bool {
        self.is_failure() || self.step_count >= MAX_EPISODE_STEPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminated: bool,
    /// Set when the episode ended only because of the step limit.
    pub time_limit: bool,
}

/// Physical constants of the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub tau: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            tau: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }

    /// Initial state with each component uniform on `[-0.05, 0.05)`.
    pub fn reset(&self, rng: &mut SplitMix64) -> EnvState {
        EnvState {
            cart_position: rng.uniform(-0.05, 0.05),
            cart_velocity: rng.uniform(-0.05, 0.05),
            pole_angle: rng.uniform(-0.05, 0.05),
            pole_tip_velocity: rng.uniform(-0.05, 0.05),
            step_count: 0,
        }
    }

    pub fn step(&self, state: &EnvState, action: usize) -> Result<StepResult> {
        if action >= N_ACTIONS {
            return Err(Error::InvalidAction {
                action,
                n_actions: N_ACTIONS,
            });
        }
        if state.is_terminal() {
            return Err(Error::TerminalStep);
        }
        let force = if action == ACTION_RIGHT {
            self.params.force_magnitude
        } else {
            -self.params.force_magnitude
        };
        let next_state = self.integrate(state, force);
        let failed = next_state.is_failure();
        let terminated = next_state.is_terminal();
        Ok(StepResult {
            next_state,
            reward: 1.0,
            terminated,
            time_limit: terminated && !failed,
        })
    }

    /// One explicit Euler step under an arbitrary horizontal force.
    pub(crate) fn integrate(&self, s: &EnvState, force: f64) -> EnvState {
        let p = &self.params;
        let total_mass = p.cart_mass + p.pole_mass;
        let pole_mass_length = p.pole_mass * p.pole_half_length;
        let (sin, cos) = s.pole_angle.sin_cos();

        let temp = (force + pole_mass_length * s.pole_tip_velocity.powi(2) * sin) / total_mass;
        let angular_acc = (p.gravity * sin - cos * temp)
            / (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let linear_acc = temp - pole_mass_length * angular_acc * cos / total_mass;

        EnvState {
            cart_position: s.cart_position + p.tau * s.cart_velocity,
            cart_velocity: s.cart_velocity + p.tau * linear_acc,
            pole_angle: s.pole_angle + p.tau * s.pole_tip_velocity,
            pole_tip_velocity: s.pole_tip_velocity + p.tau * angular_acc,
            step_count: s.step_count + 1,
        }
    }
}

/// [`CartPole`] wrapped with its current state for use by the trainer.
#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    pub dynamics: CartPole,
    pub state: EnvState,
}

impl CartPoleEnv {
    pub fn new() -> Self {
        Self {
            dynamics: CartPole::default(),
            state: EnvState::from_observation([0.0; 4], 0),
        }
    }
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPoleEnv {
    fn observation_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&mut self, rng: &mut SplitMix64) -> Vec<f64> {
        self.state = self.dynamics.reset(rng);
        self.state.observation().to_vec()
    }

    fn step(&mut self, action: usize, _rng: &mut SplitMix64) -> Result<Transition> {
        let out = self.dynamics.step(&self.state, action)?;
        self.state = out.next_state;
        Ok(Transition {
            observation: out.next_state.observation().to_vec(),
            reward: out.reward,
            terminal: out.terminated && !out.time_limit,
            truncated: out.time_limit,
        })
    }
}
