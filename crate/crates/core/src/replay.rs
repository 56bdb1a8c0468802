//! Experience replay with uniform and prioritized sampling.
//!
//! Every stored experience carries a `perturbed` flag distinguishing nominal
//! tuples from ones whose start state was an adversarially perturbed
//! observation, so the buffer's composition can be measured at any time.

use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 50_000;
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    /// `true` when `state` was an adversarially perturbed observation.
    pub perturbed: bool,
}

/// Handle to a stored slot; `seq` identifies which push filled it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRef {
    pub slot: usize,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct PrioritizedSample<'a> {
    pub index: SlotRef,
    pub experience: &'a Experience,
    pub importance_weight: f64,
}

/// Binary tree over a power-of-two number of leaves; internal nodes hold the
/// sum of their children.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, for `0 <= mass < total`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if mass < self.nodes[left] || self.nodes[left + 1] == 0.0 {
                node = left;
            } else {
                mass -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

/// Same layout as [`SumTree`] but keeps maxima.
#[derive(Debug, Clone)]
struct MaxTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl MaxTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn max(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node].max(self.nodes[2 * node + 1]);
        }
    }
}

#[derive(Debug, Clone)]
struct Priorities {
    alpha: f64,
    /// Raw priorities per slot.
    raw: Vec<f64>,
    /// `raw^alpha` for sampling.
    tree: SumTree,
    max: MaxTree,
}

/// FIFO ring buffer of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    seqs: Vec<u64>,
    cursor: usize,
    pushes: u64,
    perturbed: usize,
    priorities: Option<Priorities>,
    stale_updates: u64,
}

impl ReplayBuffer {
    pub fn uniform(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seqs: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            pushes: 0,
            perturbed: 0,
            priorities: None,
            stale_updates: 0,
        }
    }

    /// Buffer maintaining priorities with sampling exponent `alpha`.
    pub fn prioritized(capacity: usize, alpha: f64) -> Self {
        let mut buf = Self::uniform(capacity);
        buf.priorities = Some(Priorities {
            alpha,
            raw: vec![0.0; capacity],
            tree: SumTree::new(capacity),
            max: MaxTree::new(capacity),
        });
        buf
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_prioritized(&self) -> bool {
        self.priorities.is_some()
    }

    /// Total number of pushes ever made; the next push receives this sequence number.
    pub fn total_pushes(&self) -> u64 {
        self.pushes
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn get(&self, slot: usize) -> Option<&Experience> {
        self.items.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Sequence number of the push that filled `slot`.
    pub fn seq_of(&self, slot: usize) -> Option<u64> {
        self.seqs.get(slot).copied()
    }

    /// Stored entries pushed before sequence number `seq`.
    pub fn count_pushed_before(&self, seq: u64) -> usize {
        self.seqs.iter().filter(|&&s| s < seq).count()
    }

    pub fn push(&mut self, experience: Experience) {
        let seq = self.pushes;
        self.pushes += 1;
        let slot = self.cursor;
        if experience.perturbed {
            self.perturbed += 1;
        }
        if slot < self.items.len() {
            if self.items[slot].perturbed {
                self.perturbed -= 1;
            }
            self.items[slot] = experience;
            self.seqs[slot] = seq;
        } else {
            self.items.push(experience);
            self.seqs.push(seq);
        }
        self.cursor = (self.cursor + 1) % self.capacity;

        if let Some(p) = self.priorities.as_mut() {
            // The slot being replaced must not contribute to the max.
            p.max.set(slot, 0.0);
            let fresh = if p.max.max() > 0.0 { p.max.max() } else { 1.0 };
            p.raw[slot] = fresh;
            p.tree.set(slot, fresh.powf(p.alpha));
            p.max.set(slot, fresh);
        }
    }

    /// Draws `batch_size` stored items uniformly with replacement.
    pub fn sample_uniform(
        &self,
        batch_size: usize,
        rng: &mut SplitMix64,
    ) -> Result<Vec<(SlotRef, &Experience)>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| {
                let slot = rng.below(self.len());
                (
                    SlotRef {
                        slot,
                        seq: self.seqs[slot],
                    },
                    &self.items[slot],
                )
            })
            .collect())
    }

    /// Draws with `P(i) ~ priority_i^alpha` and returns importance weights
    /// `(N P(i))^-beta` normalized by the batch maximum. A uniform buffer
    /// falls back to equal priorities.
    pub fn sample_prioritized(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut SplitMix64,
    ) -> Result<Vec<PrioritizedSample<'_>>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let Some(p) = self.priorities.as_ref() else {
            return Ok(self
                .sample_uniform(batch_size, rng)?
                .into_iter()
                .map(|(index, experience)| PrioritizedSample {
                    index,
                    experience,
                    importance_weight: 1.0,
                })
                .collect());
        };
        let total = p.tree.total();
        let n = self.len() as f64;
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mut slot = p.tree.find(rng.next_f64() * total);
            if slot >= self.len() {
                slot = self.len() - 1;
            }
            let prob = p.tree.get(slot) / total;
            out.push(PrioritizedSample {
                index: SlotRef {
                    slot,
                    seq: self.seqs[slot],
                },
                experience: &self.items[slot],
                importance_weight: (n * prob).powf(-beta),
            });
        }
        let max_w = out
            .iter()
            .map(|s| s.importance_weight)
            .fold(0.0_f64, f64::max);
        for s in &mut out {
            s.importance_weight /= max_w;
        }
        Ok(out)
    }

    /// Sets `priority = |td_error| + 1e-6`. References to slots that have been
    /// overwritten since sampling are skipped and counted.
    pub fn update_priorities(&mut self, indices: &[SlotRef], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: td_errors.len(),
            });
        }
        let Some(p) = self.priorities.as_mut() else {
            return Ok(());
        };
        for (idx, &err) in indices.iter().zip(td_errors) {
            if idx.slot >= self.items.len() || self.seqs[idx.slot] != idx.seq {
                self.stale_updates += 1;
                continue;
            }
            let priority = err.abs() + PRIORITY_FLOOR;
            p.raw[idx.slot] = priority;
            p.tree.set(idx.slot, priority.powf(p.alpha));
            p.max.set(idx.slot, priority);
        }
        Ok(())
    }

    /// Raw priority of a slot, if the buffer is prioritized.
    pub fn priority(&self, slot: usize) -> Option<f64> {
        self.priorities
            .as_ref()
            .filter(|_| slot < self.len())
            .map(|p| p.raw[slot])
    }

    /// Sum of `priority^alpha` maintained by the tree root.
    pub fn priority_mass(&self) -> Option<f64> {
        self.priorities.as_ref().map(|p| p.tree.total())
    }

    /// Sampling probabilities of each stored slot under the prioritized sampler.
    pub fn sampling_probabilities(&self) -> Vec<f64> {
        match self.priorities.as_ref() {
            Some(p) => {
                let total = p.tree.total();
                (0..self.len()).map(|i| p.tree.get(i) / total).collect()
            }
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    /// `(nominal_fraction, perturbed_fraction)`; `(0, 0)` when empty.
    pub fn composition(&self) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.len() as f64;
        let perturbed = self.perturbed as f64 / n;
        ((self.len() - self.perturbed) as f64 / n, perturbed)
    }
}

/// `beta` annealed linearly from `start` to 1 over `horizon` steps.
pub fn annealed_beta(start: f64, step: u64, horizon: u64) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    let frac = (step as f64 / horizon as f64).min(1.0);
    start + frac * (1.0 - start)
}
