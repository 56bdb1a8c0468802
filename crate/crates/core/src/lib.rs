//! Deep Q-learning on CartPole under observation-perturbation attacks, with
//! adversarially-guided exploration, tabular analysis tools and a run harness.

pub mod attacks;
pub mod cartpole;
pub mod env;
pub mod error;
pub mod exploration;
pub mod harness;
pub mod neural;
pub mod replay;
pub mod resilience;
pub mod rng;
pub mod tabular;
pub mod trainer;
pub mod verify;

pub use error::{CheckpointError, Error, Result};
