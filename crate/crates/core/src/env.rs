//! The interface the DQN trainer drives.

use crate::rng::SplitMix64;
use crate::Result;

/// Outcome of one environment transition as seen by a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode ended in an absorbing failure/goal state.
    pub terminal: bool,
    /// The episode was cut by the time limit; the state itself is not absorbing.
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// An episodic environment with a discrete action space.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut SplitMix64) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut SplitMix64) -> Result<Transition>;
}
