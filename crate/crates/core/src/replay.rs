//! Fixed-capacity ring buffer of transitions with uniform sampling.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{Transition, UncertaintyBox};

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Slot the next push writes to once the buffer is full.
    cursor: usize,
    omega_box: UncertaintyBox,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, omega_box: UncertaintyBox) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            omega_box,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite {
                what: "transition pushed to the replay buffer".into(),
            });
        }
        if !self.omega_box.contains(&t.omega) {
            return Err(Error::contract(format!(
                "transition omega {:?} outside the uncertainty set",
                t.omega
            )));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `m` independent uniform draws, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Batch> {
        Batch::from_transitions(&self.sample(m, rng)?)
    }

    /// Storage slots of `m` uniform draws (slot order, not age order).
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::contract("cannot sample from an empty replay buffer"));
        }
        let n = self.storage.len();
        Ok((0..m).map(|_| rng.gen_range(0..n)).collect())
    }
}

/// A mini-batch laid out row-wise for the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    /// Termination flags as 0.0 / 1.0.
    pub dones: Vec<f64>,
    pub omegas: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::contract("a batch needs at least one transition"))?;
        let (sd, ad, od) = (first.state.len(), first.action.len(), first.omega.len());
        let m = ts.len();
        let mut b = Batch {
            states: Array2::zeros((m, sd)),
            actions: Array2::zeros((m, ad)),
            rewards: Vec::with_capacity(m),
            next_states: Array2::zeros((m, sd)),
            dones: Vec::with_capacity(m),
            omegas: Array2::zeros((m, od)),
        };
        for (i, t) in ts.iter().enumerate() {
            if t.state.len() != sd || t.action.len() != ad || t.omega.len() != od || t.next_state.len() != sd {
                return Err(Error::contract("transitions in a batch differ in shape"));
            }
            copy_row(&mut b.states, i, &t.state);
            copy_row(&mut b.actions, i, &t.action);
            copy_row(&mut b.next_states, i, &t.next_state);
            copy_row(&mut b.omegas, i, &t.omega);
            b.rewards.push(t.reward);
            b.dones.push(t.done_flag());
        }
        Ok(b)
    }
}

fn copy_row(dst: &mut Array2<f64>, i: usize, src: &[f64]) {
    dst.row_mut(i)
        .iter_mut()
        .zip(src)
        .for_each(|(d, s)| *d = *s);
}
