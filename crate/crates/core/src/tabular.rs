//! Enumerable-state tools for the replay-composition analysis.
//!
//! Toy MDPs with exact value and policy iteration, the expected TD-error of a
//! state under a replay sampling profile, and tabular Q-learning with uniform
//! experience replay under an always-successful oracle adversary.
//!
//! A perturbed observation in a tabular world makes the agent act as if it
//! were elsewhere. We model the oracle directly by its effect: with
//! probability `p_attack` the executed action is redirected (state-neutral:
//! the mirror of the intended action; targeted: `argmin Q(s, .)`), while the
//! stored experience still records the intended action. The learner then sees
//! the noisy-action MDP from [`noisy_action_mdp`], whose greedy policy agrees
//! with the nominal optimum exactly when `p_attack < 0.5`.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::attacks::AttackMode;
use crate::exploration::{argmax, argmin};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const ROW_TOLERANCE: f64 = 1e-12;
/// Q-values within this distance of the best count as optimal.
pub const OPTIMAL_SET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    name: String,
    n_states: usize,
    n_actions: usize,
    /// `kernel[(s * A + a) * S + s']`
    kernel: Vec<f64>,
    /// Same layout as `kernel`.
    reward: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    /// Action involution used by the state-neutral oracle.
    mirror: Vec<usize>,
}

impl ToyMdp {
    pub fn new(
        name: impl Into<String>,
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        mirror: Vec<usize>,
    ) -> Result<Self> {
        let len = n_states * n_actions * n_states;
        if kernel.len() != len || reward.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: kernel.len().min(reward.len()),
            });
        }
        if terminal.len() != n_states || mirror.len() != n_actions {
            return Err(Error::InvalidValue {
                field: "mdp",
                reason: "terminal flags or mirror map have the wrong length".into(),
            });
        }
        for (i, row) in kernel.chunks(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidValue {
                    field: "kernel",
                    reason: format!(
                        "row (s={}, a={}) is not a distribution (sum {sum})",
                        i / n_actions,
                        i % n_actions
                    ),
                });
            }
        }
        for (a, &m) in mirror.iter().enumerate() {
            if m >= n_actions || mirror[m] != a || m == a && n_actions > 1 {
                return Err(Error::InvalidValue {
                    field: "mirror",
                    reason: format!("mirror must be a fixed-point-free involution (action {a})"),
                });
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidValue {
                field: "gamma",
                reason: format!("{gamma} is outside [0, 1)"),
            });
        }
        Ok(Self {
            name: name.into(),
            n_states,
            n_actions,
            kernel,
            reward,
            terminal,
            gamma,
            mirror,
        })
    }

    /// Deterministic chain: action 0 moves left, 1 moves right, reaching the
    /// last state pays +1 and ends the episode.
    pub fn chain(n_states: usize, gamma: f64) -> Result<Self> {
        let (s_count, a_count) = (n_states, 2);
        let goal = n_states - 1;
        let mut kernel = vec![0.0; s_count * a_count * s_count];
        let mut reward = vec![0.0; kernel.len()];
        for s in 0..s_count {
            for a in 0..a_count {
                let next = if s == goal {
                    s
                } else if a == 0 {
                    s.saturating_sub(1)
                } else {
                    s + 1
                };
                let idx = (s * a_count + a) * s_count + next;
                kernel[idx] = 1.0;
                if next == goal && s != goal {
                    reward[idx] = 1.0;
                }
            }
        }
        let mut terminal = vec![false; s_count];
        terminal[goal] = true;
        Self::new("chain", s_count, a_count, kernel, reward, terminal, gamma, vec![1, 0])
    }

    /// 5x5 grid, actions up/right/down/left. The goal in the far corner pays
    /// +1, the pit pays -1; both end the episode. Bumping a wall stays put.
    pub fn gridworld(gamma: f64) -> Result<Self> {
        const SIDE: usize = 5;
        const GOAL: (usize, usize) = (4, 4);
        const PIT: (usize, usize) = (2, 2);
        let s_count = SIDE * SIDE;
        let a_count = 4;
        let id = |r: usize, c: usize| r * SIDE + c;
        let mut kernel = vec![0.0; s_count * a_count * s_count];
        let mut reward = vec![0.0; kernel.len()];
        let mut terminal = vec![false; s_count];
        terminal[id(GOAL.0, GOAL.1)] = true;
        terminal[id(PIT.0, PIT.1)] = true;
        for r in 0..SIDE {
            for c in 0..SIDE {
                let s = id(r, c);
                for a in 0..a_count {
                    let next = if terminal[s] {
                        s
                    } else {
                        match a {
                            0 => id(r.saturating_sub(1), c),
                            1 => id(r, (c + 1).min(SIDE - 1)),
                            2 => id((r + 1).min(SIDE - 1), c),
                            _ => id(r, c.saturating_sub(1)),
                        }
                    };
                    let idx = (s * a_count + a) * s_count + next;
                    kernel[idx] = 1.0;
                    if !terminal[s] {
                        if next == id(GOAL.0, GOAL.1) {
                            reward[idx] = 1.0;
                        } else if next == id(PIT.0, PIT.1) {
                            reward[idx] = -1.0;
                        }
                    }
                }
            }
        }
        Self::new(
            "gridworld",
            s_count,
            a_count,
            kernel,
            reward,
            terminal,
            gamma,
            vec![2, 3, 0, 1],
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn mirror(&self, a: usize) -> usize {
        self.mirror[a]
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.terminal[s])
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + next]
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::InvalidState {
                state: s,
                n_states: self.n_states,
            });
        }
        if a >= self.n_actions {
            return Err(Error::InvalidAction {
                action: a,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut SplitMix64) -> usize {
        let row = self.transition_row(s, a);
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (next, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(s)
    }

    /// Expected one-step backup `sum_s' T (r + gamma V(s'))`, with terminal
    /// successors contributing no future value.
    pub fn backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(next, &p)| {
                let future = if self.terminal[next] { 0.0 } else { v[next] };
                p * (self.reward(s, a, next) + self.gamma * future)
            })
            .sum()
    }
}

/// The MDP a learner effectively faces when each action is redirected to its
/// mirror with probability `p`.
pub fn noisy_action_mdp(mdp: &ToyMdp, p: f64) -> Result<ToyMdp> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut kernel = vec![0.0; mdp.kernel.len()];
    let mut reward = vec![0.0; mdp.reward.len()];
    for s in 0..ns {
        for a in 0..na {
            let m = mdp.mirror[a];
            for next in 0..ns {
                let pa = (1.0 - p) * mdp.transition_row(s, a)[next];
                let pm = p * mdp.transition_row(s, m)[next];
                let idx = (s * na + a) * ns + next;
                kernel[idx] = pa + pm;
                if pa + pm > 0.0 {
                    reward[idx] =
                        (pa * mdp.reward(s, a, next) + pm * mdp.reward(s, m, next)) / (pa + pm);
                }
            }
        }
    }
    ToyMdp::new(
        format!("{}-noisy", mdp.name),
        ns,
        na,
        kernel,
        reward,
        mdp.terminal.clone(),
        mdp.gamma,
        mdp.mirror.clone(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
    pub iterations: usize,
}

impl ValueSolution {
    pub fn q_row(&self, s: usize, n_actions: usize) -> &[f64] {
        &self.q[s * n_actions..(s + 1) * n_actions]
    }
}

pub fn value_iteration(mdp: &ToyMdp, tolerance: f64) -> ValueSolution {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for s in mdp.non_terminal_states() {
            for a in 0..na {
                q[s * na + a] = mdp.backup(s, a, &v);
            }
            let best = q[s * na..(s + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < tolerance || iterations >= 100_000 {
            break;
        }
    }
    ValueSolution {
        values: v,
        q,
        iterations,
    }
}

/// Per non-terminal state, the actions whose optimal Q-value is within
/// [`OPTIMAL_SET_TOLERANCE`] of the best. Terminal states get an empty set.
pub fn optimal_action_sets(mdp: &ToyMdp) -> Vec<Vec<usize>> {
    let sol = value_iteration(mdp, 1e-13);
    (0..mdp.n_states)
        .map(|s| {
            if mdp.terminal[s] {
                return Vec::new();
            }
            let row = sol.q_row(s, mdp.n_actions);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..mdp.n_actions)
                .filter(|&a| row[a] >= best - OPTIMAL_SET_TOLERANCE)
                .collect()
        })
        .collect()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    x
}

/// Exact value of a deterministic policy: solves `(I - gamma P) V = R`.
pub fn policy_evaluation(mdp: &ToyMdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.n_states;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        if mdp.terminal[s] {
            continue;
        }
        let act = policy[s];
        for (next, &p) in mdp.transition_row(s, act).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            b[s] += p * mdp.reward(s, act, next);
            if !mdp.terminal[next] {
                a[s * n + next] -= mdp.gamma * p;
            }
        }
    }
    solve_linear(a, b, n)
}

pub fn policy_iteration(mdp: &ToyMdp) -> (Vec<usize>, Vec<f64>) {
    let mut policy = vec![0; mdp.n_states];
    loop {
        let v = policy_evaluation(mdp, &policy);
        let mut stable = true;
        for s in mdp.non_terminal_states() {
            let current = mdp.backup(s, policy[s], &v);
            let (best_a, best_q) = (0..mdp.n_actions)
                .map(|a| (a, mdp.backup(s, a, &v)))
                .fold((policy[s], current), |acc, x| if x.1 > acc.1 + 1e-12 { x } else { acc });
            if best_q > current + 1e-12 {
                policy[s] = best_a;
                stable = false;
            }
        }
        if stable {
            return (policy, v);
        }
    }
}

/// Replay sampling probabilities per start state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingProfile {
    pub p_s: Vec<f64>,
    pub p_attack_given_s: Vec<f64>,
}

impl SamplingProfile {
    pub fn new(p_s: Vec<f64>, p_attack_given_s: Vec<f64>) -> Result<Self> {
        if p_s.len() != p_attack_given_s.len() {
            return Err(Error::DimensionMismatch {
                expected: p_s.len(),
                actual: p_attack_given_s.len(),
            });
        }
        let total: f64 = p_s.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidValue {
                field: "p_s",
                reason: format!("sums to {total}"),
            });
        }
        for (s, (&p, &pa)) in p_s.iter().zip(&p_attack_given_s).enumerate() {
            if !(0.0..=p + 1e-15).contains(&pa) {
                return Err(Error::InvalidValue {
                    field: "p_attack_given_s",
                    reason: format!("state {s}: {pa} is outside [0, {p}]"),
                });
            }
        }
        Ok(Self { p_s, p_attack_given_s })
    }

    /// Empirical profile of a replay buffer under uniform sampling.
    pub fn from_experiences<'a>(
        experiences: impl IntoIterator<Item = &'a TabularExperience>,
        n_states: usize,
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_states];
        let mut attacked = vec![0usize; n_states];
        let mut total = 0usize;
        for e in experiences {
            counts[e.state] += 1;
            attacked[e.state] += usize::from(e.perturbed);
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyBuffer);
        }
        let n = total as f64;
        Self::new(
            counts.iter().map(|&c| c as f64 / n).collect(),
            attacked.iter().map(|&c| c as f64 / n).collect(),
        )
    }

    pub fn n_states(&self) -> usize {
        self.p_s.len()
    }

    pub fn p_nominal(&self, s: usize) -> f64 {
        self.p_s[s] - self.p_attack_given_s[s]
    }
}

fn check_states(profile: &SamplingProfile, values: &[f64], states: &[usize]) -> Result<()> {
    if values.len() != profile.n_states() {
        return Err(Error::DimensionMismatch {
            expected: profile.n_states(),
            actual: values.len(),
        });
    }
    for &s in states {
        if s >= profile.n_states() {
            return Err(Error::InvalidState {
                state: s,
                n_states: profile.n_states(),
            });
        }
    }
    Ok(())
}

/// Expected TD-error of `s` when experiences starting at `s` are attacked
/// (successor `attacked_next`) or nominal (successor `nominal_next`).
pub fn expected_td_error(
    profile: &SamplingProfile,
    mdp: &ToyMdp,
    values: &[f64],
    s: usize,
    a: usize,
    nominal_next: usize,
    attacked_next: usize,
) -> Result<f64> {
    check_states(profile, values, &[s, nominal_next, attacked_next])?;
    mdp.check(s, a)?;
    let p_attack = profile.p_attack_given_s[s];
    let p_s = profile.p_s[s];
    let g = mdp.gamma;
    Ok(p_attack * (mdp.reward(s, a, attacked_next) + g * values[attacked_next])
        + (p_s - p_attack) * (mdp.reward(s, a, nominal_next) + g * values[nominal_next])
        - values[s])
}

/// The same quantity written with the nominal sampling probability.
pub fn expected_td_error_nominal_form(
    profile: &SamplingProfile,
    mdp: &ToyMdp,
    values: &[f64],
    s: usize,
    a: usize,
    nominal_next: usize,
    attacked_next: usize,
) -> Result<f64> {
    check_states(profile, values, &[s, nominal_next, attacked_next])?;
    mdp.check(s, a)?;
    let nominal = profile.p_nominal(s);
    let attacked = profile.p_s[s] - nominal;
    let target = |next: usize| mdp.reward(s, a, next) + mdp.gamma * values[next];
    Ok(nominal * target(nominal_next) + attacked * target(attacked_next) - values[s])
}

/// Expectation of [`expected_td_error`] when the nominal successor follows
/// `T(s, a)` and the attacked one follows `T(s, attacked_action)`.
pub fn expected_td_error_over_kernel(
    profile: &SamplingProfile,
    mdp: &ToyMdp,
    values: &[f64],
    s: usize,
    a: usize,
    attacked_action: usize,
) -> Result<f64> {
    mdp.check(s, attacked_action)?;
    let mut total = 0.0;
    for (n, &pn) in mdp.transition_row(s, a).iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        for (m, &pm) in mdp.transition_row(s, attacked_action).iter().enumerate() {
            if pm == 0.0 {
                continue;
            }
            total += pn * pm * expected_td_error(profile, mdp, values, s, a, n, m)?;
        }
    }
    Ok(total)
}

/// Whether the nominal sampling mass of `s` strictly grows between profiles.
pub fn bias_decrease_holds(before: &SamplingProfile, after: &SamplingProfile, s: usize) -> bool {
    after.p_s[s] - after.p_attack_given_s[s] > before.p_s[s] - before.p_attack_given_s[s]
}

pub fn uniform_threshold_holds(p_attack: f64) -> bool {
    p_attack < 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// `1 / n(s, a)` with `n` the number of updates applied to the pair.
    VisitDecay,
    /// `n(s, a)^-omega`, for `omega` in (0.5, 1].
    Polynomial(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfig {
    pub learning_rate: LearningRate,
    /// Behaviour is ε-greedy over Q with this fixed ε.
    pub exploration_epsilon: f64,
    pub buffer_capacity: usize,
    pub replays_per_step: usize,
    pub max_episode_steps: usize,
    pub episodes: usize,
    /// Convergence must hold over this trailing fraction of episodes.
    pub tail_fraction: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            // A constant rate leaves enough noise to flip near-tied
            // actions late in the run.
            learning_rate: LearningRate::Polynomial(0.7),
            exploration_epsilon: 0.2,
            buffer_capacity: 1_000,
            replays_per_step: 4,
            max_episode_steps: 100,
            episodes: 50_000,
            tail_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularExperience {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
    pub perturbed: bool,
}

/// Tabular Q-learning with a FIFO replay memory, stepped one episode at a time.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    mdp: ToyMdp,
    config: TabularConfig,
    q: Vec<f64>,
    updates: Vec<u32>,
    buffer: VecDeque<TabularExperience>,
    p_attack: f64,
    mode: AttackMode,
    rng: SplitMix64,
    episodes: usize,
}

impl TabularLearner {
    pub fn new(mdp: ToyMdp, config: TabularConfig, p_attack: f64, mode: AttackMode, rng: SplitMix64) -> Self {
        let n = mdp.n_states * mdp.n_actions;
        Self {
            q: vec![0.0; n],
            updates: vec![0; n],
            buffer: VecDeque::with_capacity(config.buffer_capacity),
            mdp,
            config,
            p_attack,
            mode,
            rng,
            episodes: 0,
        }
    }

    pub fn set_p_attack(&mut self, p: f64) {
        self.p_attack = p;
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn buffer(&self) -> impl Iterator<Item = &TabularExperience> {
        self.buffer.iter()
    }

    pub fn profile(&self) -> Result<SamplingProfile> {
        SamplingProfile::from_experiences(self.buffer.iter(), self.mdp.n_states)
    }

    fn q_row(&self, s: usize) -> &[f64] {
        let na = self.mdp.n_actions;
        &self.q[s * na..(s + 1) * na]
    }

    /// Lowest-index greedy action per state (0 for terminal states).
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.mdp.n_states).map(|s| argmax(self.q_row(s))).collect()
    }

    fn update(&mut self, e: TabularExperience) {
        let na = self.mdp.n_actions;
        let idx = e.state * na + e.action;
        let future = if e.terminal {
            0.0
        } else {
            self.q_row(e.next_state)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        self.updates[idx] = self.updates[idx].saturating_add(1);
        let alpha = match self.config.learning_rate {
            LearningRate::Constant(a) => a,
            LearningRate::VisitDecay => 1.0 / f64::from(self.updates[idx]),
            LearningRate::Polynomial(omega) => f64::from(self.updates[idx]).powf(-omega),
        };
        let target = e.reward + self.mdp.gamma * future;
        self.q[idx] += alpha * (target - self.q[idx]);
    }

    pub fn run_episode(&mut self) {
        let starts: Vec<usize> = self.mdp.non_terminal_states().collect();
        let mut s = starts[self.rng.below(starts.len())];
        for _ in 0..self.config.max_episode_steps {
            let intended = if self.rng.bernoulli(self.config.exploration_epsilon) {
                self.rng.below(self.mdp.n_actions)
            } else {
                argmax(self.q_row(s))
            };
            let perturbed = self.rng.bernoulli(self.p_attack);
            let executed = match (perturbed, self.mode) {
                (false, _) => intended,
                (true, AttackMode::StateNeutral) => self.mdp.mirror[intended],
                (true, AttackMode::Targeted) => argmin(self.q_row(s)),
            };
            let next = self.mdp.sample_next(s, executed, &mut self.rng);
            let e = TabularExperience {
                state: s,
                action: intended,
                reward: self.mdp.reward(s, executed, next),
                next_state: next,
                terminal: self.mdp.terminal[next],
                perturbed,
            };
            if self.buffer.len() == self.config.buffer_capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(e);
            for _ in 0..self.config.replays_per_step {
                let i = self.rng.below(self.buffer.len());
                let sample = self.buffer[i];
                self.update(sample);
            }
            if e.terminal {
                break;
            }
            s = next;
        }
        self.episodes += 1;
    }
}

pub fn policy_is_optimal(policy: &[usize], optimal: &[Vec<usize>]) -> bool {
    optimal
        .iter()
        .enumerate()
        .all(|(s, set)| set.is_empty() || set.contains(&policy[s]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularOutcome {
    pub converged: bool,
    /// Episodes after which the greedy policy stayed optimal to the end.
    pub episodes_to_converge: Option<usize>,
    pub final_policy: Vec<usize>,
    /// Exact nominal value of the final greedy policy.
    pub policy_value: Vec<f64>,
}

pub fn tabular_attack_experiment(
    mdp: &ToyMdp,
    p_attack: f64,
    mode: AttackMode,
    config: &TabularConfig,
    rng: SplitMix64,
) -> Result<TabularOutcome> {
    if !(0.0..=1.0).contains(&p_attack) {
        return Err(Error::InvalidValue {
            field: "p_attack",
            reason: format!("{p_attack} is not a probability"),
        });
    }
    let optimal = optimal_action_sets(mdp);
    let mut learner = TabularLearner::new(mdp.clone(), config.clone(), p_attack, mode, rng);
    // Episodes completed when the policy was last seen non-optimal.
    let mut last_bad = 0;
    for ep in 1..=config.episodes {
        learner.run_episode();
        if !policy_is_optimal(&learner.greedy_policy(), &optimal) {
            last_bad = ep;
        }
    }
    let tail_start = config.episodes - (config.episodes as f64 * config.tail_fraction).round() as usize;
    let converged = last_bad <= tail_start;
    let final_policy = learner.greedy_policy();
    Ok(TabularOutcome {
        converged,
        episodes_to_converge: converged.then_some(last_bad),
        policy_value: policy_evaluation(mdp, &final_policy),
        final_policy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mdp: String,
    pub p_attack: f64,
    pub seed: u64,
    pub mode: AttackMode,
    pub converged: bool,
    pub episodes_to_converge: Option<usize>,
}

/// Runs every (p, seed, mode) cell in parallel; rows come back in input order.
pub fn threshold_sweep(
    mdp: &ToyMdp,
    p_values: &[f64],
    seeds: &[u64],
    modes: &[AttackMode],
    config: &TabularConfig,
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(f64, u64, AttackMode)> = p_values
        .iter()
        .flat_map(|&p| {
            seeds
                .iter()
                .flat_map(move |&seed| modes.iter().map(move |&m| (p, seed, m)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(p, seed, mode)| {
            let rng = SplitMix64::derive(seed, &format!("tabular/{}/{}/{p}", mdp.name, mode));
            let out = tabular_attack_experiment(mdp, p, mode, config, rng)?;
            Ok(SweepRow {
                mdp: mdp.name.clone(),
                p_attack: p,
                seed,
                mode,
                converged: out.converged,
                episodes_to_converge: out.episodes_to_converge,
            })
        })
        .collect()
}

/// Fraction of converged rows per distinct `p_attack`, in ascending order.
pub fn convergence_rates(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut ps: Vec<f64> = rows.iter().map(|r| r.p_attack).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps.into_iter()
        .map(|p| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.p_attack == p).collect();
            let ok = cell.iter().filter(|r| r.converged).count();
            (p, ok as f64 / cell.len() as f64)
        })
        .collect()
}
