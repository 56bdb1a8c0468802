//! DQN training loop.
//!
//! A [`Trainer`] owns everything one run needs (environment, online and target
//! networks, optimizer, replay memory and random streams), so it can be cloned
//! mid-run to branch experiments from a common converged state.
//!
//! Transitions are stored one step late: the `next_state` of an experience is
//! the observation the agent actually sees at the following step, which is a
//! perturbed observation whenever the attack fires again.

use crate::attacks::{apply_to_step, AttackSpec};
use crate::cartpole::{CartPole, MAX_EPISODE_STEPS};
use crate::env::Environment;
use crate::exploration::{
    age_select_decoupled, argmax, boltzmann_select, eps_greedy_select, param_noise_adapt,
    param_noise_perturb, policy_divergence, ExplorationSchedule, ParamNoiseState, StrategyKind,
};
use crate::neural::{Activation, Adam, QNetwork, TrainSample};
use crate::replay::{annealed_beta, Experience, ReplayBuffer, SlotRef};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const MOVING_AVERAGE_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sampler {
    Uniform,
    Prioritized,
}

impl std::str::FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Sampler::Uniform),
            "prioritized" => Ok(Sampler::Prioritized),
            other => Err(format!(
                "unknown sampler `{other}` (expected uniform or prioritized)"
            )),
        }
    }
}

/// When a configured attack begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackStart {
    Immediately,
    /// Once the `window`-episode moving average reaches `threshold`.
    AfterConvergence { threshold: f64, window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub total_timesteps: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub buffer_size: usize,
    pub first_learning_step: u64,
    pub target_update_freq: u64,
    pub batch_size: usize,
    pub train_freq: u64,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub sampler: Sampler,
    pub prioritized_alpha: f64,
    pub prioritized_beta0: f64,
    pub strategy: StrategyKind,
    pub initial_epsilon: f64,
    pub final_epsilon: f64,
    pub exploration_fraction: f64,
    /// Decouples the AGE / Boltzmann temperature from ε when set.
    pub temperature: Option<f64>,
    pub param_noise_sigma: f64,
    pub param_noise_adapt_interval: u64,
    /// Global gradient-norm clipping threshold.
    pub grad_clip: Option<f64>,
    pub attack: Option<AttackSpec>,
    pub attack_start: AttackStart,
    /// Steps to run once an after-convergence attack has begun.
    pub post_attack_steps: u64,
    /// Keep one record per environment step in the log.
    pub record_steps: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 100_000,
            gamma: 0.99,
            learning_rate: 1e-3,
            buffer_size: 50_000,
            first_learning_step: 1_000,
            target_update_freq: 500,
            batch_size: 32,
            train_freq: 1,
            hidden_layers: vec![64, 64],
            activation: Activation::Tanh,
            sampler: Sampler::Prioritized,
            prioritized_alpha: 0.6,
            prioritized_beta0: 0.4,
            strategy: StrategyKind::EpsGreedy,
            initial_epsilon: 1.0,
            final_epsilon: 0.02,
            exploration_fraction: 0.1,
            temperature: None,
            param_noise_sigma: 0.01,
            param_noise_adapt_interval: 50,
            grad_clip: Some(10.0),
            attack: None,
            attack_start: AttackStart::AfterConvergence {
                threshold: 475.0,
                window: MOVING_AVERAGE_WINDOW,
            },
            post_attack_steps: 60_000,
            record_steps: true,
        }
    }
}

impl TrainerConfig {
    pub fn schedule(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            initial_epsilon: self.initial_epsilon,
            final_epsilon: self.final_epsilon,
            exploration_fraction: self.exploration_fraction,
            total_timesteps: self.total_timesteps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            errors.push(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0) {
            errors.push("learning_rate must be positive".to_string());
        }
        if self.buffer_size == 0 {
            errors.push("buffer_size must be positive".to_string());
        }
        if self.batch_size == 0 {
            errors.push("batch_size must be positive".to_string());
        }
        if self.train_freq == 0 || self.target_update_freq == 0 {
            errors.push("train_freq and target_update_freq must be positive".to_string());
        }
        if self.batch_size as u64 > self.first_learning_step.max(1)
            || self.batch_size > self.buffer_size
        {
            errors.push(format!(
                "batch_size {} exceeds the replay occupancy at the first learning step",
                self.batch_size
            ));
        }
        if !(0.0..=1.0).contains(&self.final_epsilon) || !(0.0..=1.0).contains(&self.initial_epsilon) {
            errors.push("exploration probabilities must lie in [0, 1]".to_string());
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                errors.push(format!("temperature must be positive, got {t}"));
            }
        }
        if self.strategy == StrategyKind::ParamNoise && self.param_noise_adapt_interval == 0 {
            errors.push("param_noise_adapt_interval must be positive".to_string());
        }
        if let Some(a) = &self.attack {
            if let Err(e) = a.validate() {
                errors.push(e.to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    /// Reward accumulated in the current episode so far.
    pub episode_reward: f64,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub attacked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Number of environment steps taken when the episode ended.
    pub end_step: u64,
    pub reward: f64,
    /// Mean over the last 100 episodes; `None` before 100 episodes.
    pub ma100: Option<f64>,
    pub attacked_steps: u64,
    pub perturbed_fraction: f64,
    /// Stored experiences pushed before the attack began.
    pub pre_attack_remaining: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainLog {
    pub fn episode_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }

    fn push_episode(&mut self, mut record: EpisodeRecord) {
        let n = self.episodes.len() + 1;
        if n >= MOVING_AVERAGE_WINDOW {
            let tail = &self.episodes[n - MOVING_AVERAGE_WINDOW..];
            let sum: f64 = tail.iter().map(|e| e.reward).sum::<f64>() + record.reward;
            record.ma100 = Some(sum / MOVING_AVERAGE_WINDOW as f64);
        }
        self.episodes.push(record);
    }
}

/// `r` for terminal transitions, `r + gamma * max_a Q_target(s', a)` otherwise.
pub fn td_target(reward: f64, terminal: bool, next_q_max: f64, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q_max
    }
}

/// Where a moving average first reaches a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergencePoint {
    /// Number of completed episodes (1-based).
    pub episode: usize,
    pub step: u64,
}

/// First index `k` (1-based count) whose trailing `window` mean of `rewards`
/// reaches `threshold`.
pub fn first_crossing(rewards: &[f64], threshold: f64, window: usize) -> Option<usize> {
    if window == 0 || rewards.len() < window {
        return None;
    }
    let mut sum: f64 = rewards[..window].iter().sum();
    if sum / window as f64 >= threshold {
        return Some(window);
    }
    for k in window..rewards.len() {
        sum += rewards[k] - rewards[k - window];
        if sum / window as f64 >= threshold {
            return Some(k + 1);
        }
    }
    None
}

pub fn detect_convergence(log: &TrainLog, threshold: f64, window: usize) -> Option<ConvergencePoint> {
    let rewards = log.episode_rewards();
    first_crossing(&rewards, threshold, window).map(|episode| ConvergencePoint {
        episode,
        step: log.episodes[episode - 1].end_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
}

/// Greedy CartPole rollouts without exploration or attacks.
pub fn evaluate(net: &QNetwork, episodes: usize, rng: &mut SplitMix64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::InvalidValue {
            field: "episodes",
            reason: "at least one evaluation episode is required".into(),
        });
    }
    let env = CartPole::default();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..MAX_EPISODE_STEPS {
            let action = argmax(&net.forward(&state.observation())?);
            let out = env.step(&state, action)?;
            total += out.reward;
            state = out.next_state;
            if out.terminated {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(EvalStats {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone)]
struct Streams {
    env: SplitMix64,
    act: SplitMix64,
    replay: SplitMix64,
    attack: SplitMix64,
    noise: SplitMix64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            env: SplitMix64::derive(seed, "env"),
            act: SplitMix64::derive(seed, "exploration"),
            replay: SplitMix64::derive(seed, "replay"),
            attack: SplitMix64::derive(seed, "attacks"),
            noise: SplitMix64::derive(seed, "param_noise"),
        }
    }
}

#[derive(Debug, Clone)]
struct ParamNoise {
    state: ParamNoiseState,
    net: QNetwork,
}

/// Bookkeeping from the moment an attack begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackWindow {
    pub started_at_step: u64,
    pub started_at_episode: u64,
    /// Sequence number of the first push made under attack.
    pub start_seq: u64,
    pub pushes: u64,
    pub perturbed_pushes: u64,
    /// Pushes after which no pre-attack experience remained.
    pub pre_attack_cleared_after: Option<u64>,
}

/// One resumable DQN run.
#[derive(Debug, Clone)]
pub struct Trainer<E> {
    config: TrainerConfig,
    env: E,
    online: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    buffer: ReplayBuffer,
    streams: Streams,
    steps: u64,
    episodes: u64,
    observation: Vec<f64>,
    episode_reward: f64,
    episode_attacked: u64,
    pending: Option<Experience>,
    noise: Option<ParamNoise>,
    attack: Option<AttackSpec>,
    attack_window: Option<AttackWindow>,
    convergence: Option<ConvergencePoint>,
    updates: u64,
    last_loss: Option<f64>,
    log: TrainLog,
}

impl<E: Environment> Trainer<E> {
    pub fn new(config: TrainerConfig, mut env: E, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut streams = Streams::new(seed);
        let mut init = SplitMix64::derive(seed, "network_init");
        let mut dims = vec![env.observation_dim()];
        dims.extend(&config.hidden_layers);
        dims.push(env.n_actions());
        let online = QNetwork::new(&dims, config.activation, &mut init);
        let target = online.clone();
        let optimizer = Adam::new(&online, config.learning_rate);
        let buffer = match config.sampler {
            Sampler::Uniform => ReplayBuffer::uniform(config.buffer_size),
            Sampler::Prioritized => {
                ReplayBuffer::prioritized(config.buffer_size, config.prioritized_alpha)
            }
        };
        let observation = env.reset(&mut streams.env);
        let noise = (config.strategy == StrategyKind::ParamNoise).then(|| {
            let state = ParamNoiseState {
                sigma: config.param_noise_sigma,
                threshold: ParamNoiseState::threshold_for_epsilon(
                    config.initial_epsilon,
                    env.n_actions(),
                ),
                ..Default::default()
            };
            ParamNoise {
                net: param_noise_perturb(&online, &state, &mut streams.noise),
                state,
            }
        });
        let mut trainer = Self {
            env,
            online,
            target,
            optimizer,
            buffer,
            streams,
            steps: 0,
            episodes: 0,
            observation,
            episode_reward: 0.0,
            episode_attacked: 0,
            pending: None,
            noise,
            attack: None,
            attack_window: None,
            convergence: None,
            updates: 0,
            last_loss: None,
            log: TrainLog::default(),
            config,
        };
        if let (Some(spec), AttackStart::Immediately) = (trainer.config.attack, trainer.config.attack_start) {
            trainer.start_attack(spec);
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn attack_window(&self) -> Option<&AttackWindow> {
        self.attack_window.as_ref()
    }

    pub fn convergence(&self) -> Option<ConvergencePoint> {
        self.convergence
    }

    pub fn param_noise_state(&self) -> Option<ParamNoiseState> {
        self.noise.as_ref().map(|n| n.state)
    }

    pub fn into_parts(self) -> (QNetwork, TrainLog, E) {
        (self.online, self.log, self.env)
    }

    /// Begins mediating observations with `spec` from the next step on.
    pub fn start_attack(&mut self, spec: AttackSpec) {
        self.attack = Some(spec);
        self.attack_window = Some(AttackWindow {
            started_at_step: self.steps,
            started_at_episode: self.episodes,
            start_seq: self.buffer.total_pushes(),
            pushes: 0,
            perturbed_pushes: 0,
            pre_attack_cleared_after: None,
        });
    }

    pub fn epsilon(&self) -> f64 {
        self.config.schedule().epsilon_at(self.steps)
    }

    fn push(&mut self, experience: Experience) {
        let perturbed = experience.perturbed;
        self.buffer.push(experience);
        if let Some(w) = self.attack_window.as_mut() {
            w.pushes += 1;
            w.perturbed_pushes += u64::from(perturbed);
            if w.pre_attack_cleared_after.is_none()
                && self.buffer.count_pushed_before(w.start_seq) == 0
            {
                w.pre_attack_cleared_after = Some(w.pushes);
            }
        }
    }

    fn select_action(&mut self, observed: &[f64], epsilon: f64) -> Result<usize> {
        let temperature = self.config.temperature.unwrap_or(epsilon);
        let rng = &mut self.streams.act;
        Ok(match self.config.strategy {
            StrategyKind::EpsGreedy => eps_greedy_select(&self.online.forward(observed)?, epsilon, rng),
            StrategyKind::Age => {
                age_select_decoupled(&self.online.forward(observed)?, epsilon, temperature, rng)?
            }
            StrategyKind::Boltzmann => {
                boltzmann_select(&self.online.forward(observed)?, temperature, rng)?
            }
            StrategyKind::ParamNoise => {
                let net = self.noise.as_ref().map_or(&self.online, |n| &n.net);
                argmax(&net.forward(observed)?)
            }
        })
    }

    /// Advances one environment step, learning when due.
    pub fn step(&mut self) -> Result<()> {
        let epsilon = self.epsilon();
        let true_obs = std::mem::take(&mut self.observation);
        let (observed, attacked, forced) = match &self.attack {
            Some(spec) => {
                let out = apply_to_step(spec, &self.online, &true_obs, &mut self.streams.attack)?;
                (out.observed, out.attacked, out.forced_action)
            }
            None => (true_obs, false, None),
        };
        if let Some(mut pending) = self.pending.take() {
            pending.next_state = observed.clone();
            self.push(pending);
        }

        let action = match forced {
            Some(a) => a,
            None => self.select_action(&observed, epsilon)?,
        };
        let transition = self.env.step(action, &mut self.streams.env)?;
        self.steps += 1;
        self.episode_reward += transition.reward;
        self.episode_attacked += u64::from(attacked);

        let done = transition.done();
        let experience = Experience {
            state: observed,
            action,
            reward: transition.reward,
            next_state: Vec::new(),
            terminal: transition.terminal,
            perturbed: attacked,
        };
        if done {
            self.push(Experience {
                next_state: transition.observation.clone(),
                ..experience
            });
        } else {
            self.pending = Some(experience);
        }
        self.observation = transition.observation;

        let mut loss = None;
        if self.steps >= self.config.first_learning_step && self.steps % self.config.train_freq == 0 {
            loss = Some(self.learn()?);
        }
        if self.steps % self.config.target_update_freq == 0 {
            self.target.clone_from(&self.online);
        }
        if self.noise.is_some() && self.steps % self.config.param_noise_adapt_interval == 0 {
            self.adapt_param_noise(epsilon);
        }

        if self.config.record_steps {
            self.log.steps.push(StepRecord {
                step: self.steps,
                episode: self.episodes,
                episode_reward: self.episode_reward,
                epsilon,
                loss,
                attacked,
            });
        }
        if done {
            self.finish_episode();
        }
        Ok(())
    }

    fn finish_episode(&mut self) {
        let pre_attack_remaining = self
            .attack_window
            .map(|w| self.buffer.count_pushed_before(w.start_seq) as u64);
        self.log.push_episode(EpisodeRecord {
            episode: self.episodes,
            end_step: self.steps,
            reward: self.episode_reward,
            ma100: None,
            attacked_steps: self.episode_attacked,
            perturbed_fraction: self.buffer.composition().1,
            pre_attack_remaining,
        });
        self.episodes += 1;
        self.episode_reward = 0.0;
        self.episode_attacked = 0;
        self.observation = self.env.reset(&mut self.streams.env);
        if let Some(noise) = self.noise.as_mut() {
            noise.net = param_noise_perturb(&self.online, &noise.state, &mut self.streams.noise);
        }

        if self.convergence.is_none() {
            if let AttackStart::AfterConvergence { threshold, window } = self.config.attack_start {
                self.convergence = detect_convergence(&self.log, threshold, window);
                if let (Some(_), Some(spec), None) =
                    (self.convergence, self.config.attack, self.attack_window)
                {
                    self.start_attack(spec);
                }
            }
        }
    }

    fn adapt_param_noise(&mut self, epsilon: f64) {
        let n = self.config.batch_size.min(self.buffer.len());
        if n == 0 {
            return;
        }
        let mut inputs = Vec::with_capacity(n * self.online.input_dim());
        for (_, e) in self
            .buffer
            .sample_uniform(n, &mut self.streams.noise)
            .expect("buffer is non-empty")
        {
            inputs.extend_from_slice(&e.state);
        }
        let n_actions = self.online.output_dim();
        let noise = self.noise.as_mut().expect("param noise enabled");
        let divergence = policy_divergence(&self.online, &noise.net, &inputs, n);
        noise.state.threshold = ParamNoiseState::threshold_for_epsilon(epsilon, n_actions);
        noise.state = param_noise_adapt(&noise.state, divergence);
    }

    fn learn(&mut self) -> Result<f64> {
        let batch_size = self.config.batch_size;
        let beta = annealed_beta(
            self.config.prioritized_beta0,
            self.steps,
            self.config.total_timesteps,
        );
        let picks: Vec<(SlotRef, &Experience, f64)> = match self.config.sampler {
            Sampler::Uniform => self
                .buffer
                .sample_uniform(batch_size, &mut self.streams.replay)?
                .into_iter()
                .map(|(i, e)| (i, e, 1.0))
                .collect(),
            Sampler::Prioritized => self
                .buffer
                .sample_prioritized(batch_size, beta, &mut self.streams.replay)?
                .into_iter()
                .map(|s| (s.index, s.experience, s.importance_weight))
                .collect(),
        };

        let dim = self.online.input_dim();
        let mut next_states = Vec::with_capacity(picks.len() * dim);
        for (_, e, _) in &picks {
            next_states.extend_from_slice(&e.next_state);
        }
        let next_q = self.target.forward_batch(&next_states, picks.len());
        let k = self.target.output_dim();
        let samples: Vec<TrainSample> = picks
            .iter()
            .enumerate()
            .map(|(b, (_, e, w))| {
                let row = &next_q[b * k..(b + 1) * k];
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                TrainSample {
                    observation: &e.state,
                    action: e.action,
                    target: td_target(e.reward, e.terminal, best, self.config.gamma),
                    weight: *w,
                }
            })
            .collect();
        let mut out = self.online.loss_and_gradients(&samples)?;
        if let Some(c) = self.config.grad_clip {
            out.gradients.clip_norm(c);
        }
        let indices: Vec<SlotRef> = picks.iter().map(|(i, _, _)| *i).collect();
        drop(samples);
        drop(picks);

        self.optimizer.apply(&mut self.online, &out.gradients)?;
        if self.buffer.is_prioritized() {
            self.buffer.update_priorities(&indices, &out.residuals)?;
        }
        self.updates += 1;
        self.last_loss = Some(out.loss);
        Ok(out.loss)
    }

    pub fn run_steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Runs the configured schedule. With an after-convergence attack the run
    /// lasts until convergence (at most `total_timesteps`) plus
    /// `post_attack_steps`; otherwise exactly `total_timesteps`.
    pub fn run(&mut self) -> Result<()> {
        let after_convergence = self.config.attack.is_some()
            && matches!(self.config.attack_start, AttackStart::AfterConvergence { .. });
        while self.steps < self.config.total_timesteps {
            if after_convergence && self.attack_window.is_some() {
                break;
            }
            self.step()?;
        }
        if let Some(w) = self.attack_window {
            if after_convergence {
                let end = w.started_at_step + self.config.post_attack_steps;
                while self.steps < end {
                    self.step()?;
                }
            }
        }
        Ok(())
    }
}

/// Trains on CartPole per `config`.
pub fn train(config: TrainerConfig, seed: u64) -> Result<(QNetwork, TrainLog)> {
    let mut trainer = Trainer::new(config, crate::cartpole::CartPoleEnv::new(), seed)?;
    trainer.run()?;
    let (net, log, _) = trainer.into_parts();
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::CartPoleEnv;

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            total_timesteps: 3_000,
            first_learning_step: 500,
            target_update_freq: 100,
            buffer_size: 2_000,
            hidden_layers: vec![16],
            ..Default::default()
        }
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(1.0, true, 123.0, 0.99), 1.0);
        assert_eq!(td_target(1.0, false, 50.0, 0.0), 1.0);
        assert!((td_target(1.0, false, 10.0, 0.99) - 10.9).abs() < 1e-12);
    }

    #[test]
    fn convergence_detection() {
        let log_of = |rewards: &[f64]| TrainLog {
            steps: vec![],
            episodes: rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| EpisodeRecord {
                    episode: i as u64,
                    end_step: (i as u64 + 1) * 10,
                    reward: r,
                    ma100: None,
                    attacked_steps: 0,
                    perturbed_fraction: 0.0,
                    pre_attack_remaining: None,
                })
                .collect(),
        };
        let p = detect_convergence(&log_of(&[500.0; 150]), 475.0, 100).unwrap();
        assert_eq!(p.episode, 100);
        assert_eq!(p.step, 1000);
        assert!(detect_convergence(&log_of(&[400.0; 300]), 475.0, 100).is_none());

        // Ramp 0, 5, 10, ... crosses 475 per-episode at k = 96 (1-based).
        let ramp: Vec<f64> = (0..400).map(|i| (5.0 * i as f64).min(500.0)).collect();
        let k = ramp.iter().position(|&r| r >= 475.0).unwrap() + 1;
        let hit = detect_convergence(&log_of(&ramp), 475.0, 100).unwrap().episode;
        assert!(hit >= k && hit <= k + 100, "{hit} vs {k}");
    }

    #[test]
    fn config_contradictions_are_reported() {
        let cfg = TrainerConfig {
            batch_size: 2_000,
            first_learning_step: 100,
            gamma: 1.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_learning_before_first_learning_step() {
        let cfg = small_config();
        let mut t = Trainer::new(cfg.clone(), CartPoleEnv::new(), 1).unwrap();
        let initial = t.online().clone();
        t.run_steps(cfg.first_learning_step - 1).unwrap();
        assert_eq!(t.online(), &initial);
        assert_eq!(t.updates(), 0);
        t.step().unwrap();
        assert_ne!(t.online(), &initial);
    }

    #[test]
    fn target_only_moves_at_sync_points() {
        let cfg = small_config();
        let mut t = Trainer::new(cfg.clone(), CartPoleEnv::new(), 2).unwrap();
        t.run_steps(cfg.first_learning_step).unwrap();
        let mut last = t.target().clone();
        for _ in 0..400 {
            t.step().unwrap();
            if t.steps() % cfg.target_update_freq == 0 {
                assert_eq!(t.target(), t.online());
                last = t.target().clone();
            } else {
                assert_eq!(t.target(), &last);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = train(small_config(), 3).unwrap();
        let b = train(small_config(), 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn every_strategy_runs() {
        for strategy in [
            StrategyKind::EpsGreedy,
            StrategyKind::Boltzmann,
            StrategyKind::ParamNoise,
            StrategyKind::Age,
        ] {
            let cfg = TrainerConfig {
                strategy,
                total_timesteps: 1_200,
                ..small_config()
            };
            let (net, log) = train(cfg, 4).unwrap();
            assert_eq!(log.steps.len(), 1_200);
            assert!(net.parameters().all(f64::is_finite));
        }
    }

    #[test]
    fn immediate_attack_marks_experiences() {
        let cfg = TrainerConfig {
            attack: Some(AttackSpec {
                p_attack: 0.5,
                ..Default::default()
            }),
            attack_start: AttackStart::Immediately,
            sampler: Sampler::Uniform,
            ..small_config()
        };
        let mut t = Trainer::new(cfg, CartPoleEnv::new(), 5).unwrap();
        t.run().unwrap();
        let w = t.attack_window().unwrap();
        let frac = w.perturbed_pushes as f64 / w.pushes as f64;
        let sigma = (0.25 / w.pushes as f64).sqrt();
        assert!((frac - 0.5).abs() < 4.0 * sigma, "{frac}");
        let attacked_steps = t.log().steps.iter().filter(|s| s.attacked).count() as u64;
        assert!(attacked_steps >= w.perturbed_pushes);
    }

    #[test]
    fn evaluation_is_deterministic_and_zero_net_is_poor() {
        let net = QNetwork::zeros(&[4, 8, 2], Activation::Tanh);
        let a = evaluate(&net, 20, &mut SplitMix64::new(9)).unwrap();
        let b = evaluate(&net, 20, &mut SplitMix64::new(9)).unwrap();
        assert_eq!(a, b);
        // Always pushing left topples the pole within a few dozen steps.
        assert!(a.mean < 50.0, "{a:?}");
        assert!(evaluate(&net, 0, &mut SplitMix64::new(9)).is_err());
    }
}
