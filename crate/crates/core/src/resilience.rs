//! Benchmarking a frozen victim with a learned, cost-aware adversary.
//!
//! The adversary is itself a DQN. Each step it sees the victim's true
//! observation and chooses between letting the victim act on it and replacing
//! it with a targeted perturbation, paying `c_adv` per perturbation. Its reward
//! is the negated victim reward, so its return is the victim's shortfall
//! minus the perturbation bill.

use crate::attacks::{craft, AttackMode, AttackSpec};
use crate::cartpole::{CartPole, EnvState, MAX_EPISODE_STEPS, N_ACTIONS};
use crate::env::{Environment, Transition};
use crate::exploration::{argmax, StrategyKind};
use crate::neural::QNetwork;
use crate::rng::SplitMix64;
use crate::trainer::{AttackStart, Sampler, Trainer, TrainerConfig};
use crate::{Error, Result};

pub const ACTION_NOOP: usize = 0;
pub const ACTION_PERTURB: usize = 1;
pub const MAX_RETURN: f64 = MAX_EPISODE_STEPS as f64;

pub fn adversary_step_reward(victim_step_reward: f64, attacked: bool, c_adv: f64) -> f64 {
    -victim_step_reward - if attacked { c_adv } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryConfig {
    pub trainer: TrainerConfig,
    pub c_adv: f64,
    /// Append the victim's Q-values to the adversary's observation.
    pub observe_victim_q: bool,
    pub quasi_stable_window: usize,
    pub quasi_stable_tolerance: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig {
                total_timesteps: 100_000,
                sampler: Sampler::Prioritized,
                strategy: StrategyKind::ParamNoise,
                exploration_fraction: 0.1,
                final_epsilon: 0.02,
                attack: None,
                attack_start: AttackStart::Immediately,
                record_steps: false,
                ..TrainerConfig::default()
            },
            c_adv: 1.0,
            observe_victim_q: false,
            quasi_stable_window: 200,
            quasi_stable_tolerance: 0.05,
        }
    }
}

/// Per-episode totals of the victim under the adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeTally {
    pub victim_reward: f64,
    pub perturbations: u32,
    pub adversary_return: f64,
    pub end_step: u64,
}

/// CartPole seen from the adversary's side.
#[derive(Debug, Clone)]
pub struct AdversaryEnv {
    victim: QNetwork,
    dynamics: CartPole,
    state: EnvState,
    spec: AttackSpec,
    observe_victim_q: bool,
    current: EpisodeTally,
    steps: u64,
    finished: Vec<EpisodeTally>,
}

impl AdversaryEnv {
    pub fn new(victim: QNetwork, c_adv: f64, observe_victim_q: bool) -> Result<Self> {
        if victim.input_dim() != 4 || victim.output_dim() != N_ACTIONS {
            return Err(Error::DimensionMismatch {
                expected: 4,
                actual: victim.input_dim(),
            });
        }
        Ok(Self {
            victim,
            dynamics: CartPole::default(),
            state: EnvState::from_observation([0.0; 4], 0),
            spec: AttackSpec {
                p_attack: 1.0,
                mode: AttackMode::Targeted,
                oracle_fallback: true,
                c_adv,
                ..AttackSpec::default()
            },
            observe_victim_q,
            current: EpisodeTally {
                victim_reward: 0.0,
                perturbations: 0,
                adversary_return: 0.0,
                end_step: 0,
            },
            steps: 0,
            finished: Vec::new(),
        })
    }

    pub fn victim(&self) -> &QNetwork {
        &self.victim
    }

    pub fn finished_episodes(&self) -> &[EpisodeTally] {
        &self.finished
    }

    fn observe(&self) -> Vec<f64> {
        let obs = self.state.observation().to_vec();
        if self.observe_victim_q {
            let mut out = obs.clone();
            out.extend(self.victim.forward(&obs).expect("victim takes 4 inputs"));
            out
        } else {
            obs
        }
    }
}

impl Environment for AdversaryEnv {
    fn observation_dim(&self) -> usize {
        if self.observe_victim_q {
            4 + N_ACTIONS
        } else {
            4
        }
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut SplitMix64) -> Vec<f64> {
        self.state = self.dynamics.reset(rng);
        self.current = EpisodeTally {
            victim_reward: 0.0,
            perturbations: 0,
            adversary_return: 0.0,
            end_step: self.steps,
        };
        self.observe()
    }

    fn step(&mut self, action: usize, _rng: &mut SplitMix64) -> Result<Transition> {
        if action >= 2 {
            return Err(Error::InvalidAction {
                action,
                n_actions: 2,
            });
        }
        let obs = self.state.observation();
        let attacked = action == ACTION_PERTURB;
        let victim_action = if attacked {
            craft(&self.spec, &self.victim, &obs)?.induced_action
        } else {
            argmax(&self.victim.forward(&obs)?)
        };
        let out = self.dynamics.step(&self.state, victim_action)?;
        self.state = out.next_state;
        self.steps += 1;
        let reward = adversary_step_reward(out.reward, attacked, self.spec.c_adv);
        self.current.victim_reward += out.reward;
        self.current.perturbations += u32::from(attacked);
        self.current.adversary_return += reward;
        let done = out.terminated || out.time_limit;
        if done {
            self.current.end_step = self.steps;
            self.finished.push(self.current);
        }
        Ok(Transition {
            observation: self.observe(),
            reward,
            terminal: out.terminated,
            truncated: out.time_limit && !out.terminated,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRow {
    pub episode: usize,
    pub victim_reward: f64,
    pub regret: f64,
    pub perturbations: u32,
    pub ma100_regret: f64,
    pub ma100_perturbations: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLog {
    pub rows: Vec<RegretRow>,
}

impl RegretLog {
    /// Builds the log; moving averages use all episodes so far until 100
    /// are available.
    pub fn from_tallies(tallies: &[EpisodeTally]) -> Self {
        let mut rows = Vec::with_capacity(tallies.len());
        let (mut sum_r, mut sum_p) = (0.0, 0.0);
        for (i, t) in tallies.iter().enumerate() {
            let regret = MAX_RETURN - t.victim_reward;
            sum_r += regret;
            sum_p += f64::from(t.perturbations);
            if i >= 100 {
                sum_r -= MAX_RETURN - tallies[i - 100].victim_reward;
                sum_p -= f64::from(tallies[i - 100].perturbations);
            }
            let n = (i + 1).min(100) as f64;
            rows.push(RegretRow {
                episode: i,
                victim_reward: t.victim_reward,
                regret,
                perturbations: t.perturbations,
                ma100_regret: sum_r / n,
                ma100_perturbations: sum_p / n,
            });
        }
        Self { rows }
    }

    pub fn final_ma100_regret(&self) -> Option<f64> {
        self.rows.last().map(|r| r.ma100_regret)
    }

    pub fn final_ma100_perturbations(&self) -> Option<f64> {
        self.rows.last().map(|r| r.ma100_perturbations)
    }
}

fn quasi_stable_rows(rows: &[RegretRow], tolerance: f64) -> bool {
    let series = rows.iter().map(|r| r.ma100_perturbations);
    let (lo, hi, sum) = series.fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), x| {
        (lo.min(x), hi.max(x), s + x)
    });
    let mean = sum / rows.len() as f64;
    let spread = hi - lo;
    spread == 0.0 || spread < tolerance * mean.abs()
}

/// Whether the moving-average perturbation count over the last `window`
/// episodes stays within a relative band of `tolerance` around its mean.
pub fn quasi_stable(log: &RegretLog, window: usize, tolerance: f64) -> Result<bool> {
    if window == 0 || log.rows.len() < window {
        return Err(Error::InsufficientHistory {
            needed: window.max(1),
            available: log.rows.len(),
        });
    }
    Ok(quasi_stable_rows(&log.rows[log.rows.len() - window..], tolerance))
}

/// First episode (1-based count) at which [`quasi_stable`] holds.
pub fn first_quasi_stable(log: &RegretLog, window: usize, tolerance: f64) -> Option<usize> {
    (window.max(1)..=log.rows.len())
        .find(|&end| quasi_stable_rows(&log.rows[end - window..end], tolerance))
}

/// First episode at which the adversary counts as converged: quasi-stable
/// and its moving-average regret within `tolerance` of the best seen so far.
pub fn termination_episode(log: &RegretLog, window: usize, tolerance: f64) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    for end in 1..=log.rows.len() {
        best = best.max(log.rows[end - 1].ma100_regret);
        if end >= window.max(1)
            && quasi_stable_rows(&log.rows[end - window..end], tolerance)
            && log.rows[end - 1].ma100_regret >= (1.0 - tolerance) * best
        {
            return Some(end);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct AdversaryOutcome {
    pub adversary: QNetwork,
    pub log: RegretLog,
    pub tallies: Vec<EpisodeTally>,
    pub quasi_stable_at: Option<usize>,
    pub terminated_at: Option<usize>,
    /// Step count at the end of the episode where termination fired.
    pub terminated_at_step: Option<u64>,
    pub victim_after: QNetwork,
}

/// Trains an adversary against `victim` for the full timestep budget.
pub fn train_adversary(victim: &QNetwork, config: &AdversaryConfig, seed: u64) -> Result<AdversaryOutcome> {
    let env = AdversaryEnv::new(victim.clone(), config.c_adv, config.observe_victim_q)?;
    let mut trainer = Trainer::new(config.trainer.clone(), env, seed)?;
    trainer.run()?;
    let (adversary, _, env) = trainer.into_parts();
    let tallies = env.finished_episodes().to_vec();
    let log = RegretLog::from_tallies(&tallies);
    let (w, tol) = (config.quasi_stable_window, config.quasi_stable_tolerance);
    let terminated_at = termination_episode(&log, w, tol);
    Ok(AdversaryOutcome {
        adversary,
        quasi_stable_at: first_quasi_stable(&log, w, tol),
        terminated_at_step: terminated_at.map(|e| tallies[e - 1].end_step),
        terminated_at,
        log,
        tallies,
        victim_after: env.victim().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    fn tally(victim_reward: f64, perturbations: u32) -> EpisodeTally {
        EpisodeTally {
            victim_reward,
            perturbations,
            adversary_return: 0.0,
            end_step: 0,
        }
    }

    #[test]
    fn reward_shaping() {
        assert_eq!(adversary_step_reward(1.0, false, 1.0), -1.0);
        assert_eq!(adversary_step_reward(1.0, true, 1.0), -2.0);
        assert_eq!(adversary_step_reward(1.0, true, 0.0), -1.0);
    }

    #[test]
    fn regret_log_moving_means() {
        let tallies: Vec<_> = (0..150).map(|i| tally(if i < 100 { 100.0 } else { 300.0 }, 2)).collect();
        let log = RegretLog::from_tallies(&tallies);
        assert_eq!(log.rows[0].regret, 400.0);
        assert_eq!(log.rows[99].ma100_regret, 400.0);
        assert!((log.rows[149].ma100_regret - 300.0).abs() < 1e-9);
        assert!(log.rows.iter().all(|r| r.regret + r.victim_reward == MAX_RETURN));
    }

    #[test]
    fn quasi_stability_cases() {
        let flat = RegretLog::from_tallies(&vec![tally(200.0, 5); 300]);
        assert!(quasi_stable(&flat, 200, 0.05).unwrap());
        assert_eq!(first_quasi_stable(&flat, 200, 0.05), Some(200));
        let zeros = RegretLog::from_tallies(&vec![tally(200.0, 0); 300]);
        assert!(quasi_stable(&zeros, 200, 0.05).unwrap());
        let growing: Vec<_> = (0..400).map(|i| tally(200.0, i)).collect();
        let growing = RegretLog::from_tallies(&growing);
        assert!(!quasi_stable(&growing, 200, 0.05).unwrap());
        assert!(first_quasi_stable(&growing, 200, 0.05).is_none());
        assert!(matches!(
            quasi_stable(&flat, 400, 0.05),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn episode_accounting_is_exact() {
        let victim = QNetwork::new(&[4, 8, 2], Activation::Tanh, &mut SplitMix64::new(3));
        let mut env = AdversaryEnv::new(victim, 1.0, true).unwrap();
        let mut rng = SplitMix64::new(4);
        assert_eq!(env.reset(&mut rng).len(), 6);
        let mut ret = 0.0;
        let mut steps = 0u32;
        loop {
            let t = env.step(steps as usize % 2, &mut rng).unwrap();
            ret += t.reward;
            steps += 1;
            if t.done() {
                break;
            }
        }
        let ep = env.finished_episodes()[0];
        assert_eq!(ep.victim_reward, f64::from(steps));
        assert_eq!(ep.perturbations, (steps + 1) / 2);
        assert_eq!(ret, -ep.victim_reward - f64::from(ep.perturbations));
        assert_eq!(ep.adversary_return, ret);
    }
}
