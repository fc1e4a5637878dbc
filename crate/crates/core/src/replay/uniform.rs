use rand::Rng;

use super::{square_side, Transition};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Minibatch drawn from [`UniformReplay`].
#[derive(Clone, Debug)]
pub struct TransitionBatch {
    /// `[k×F×H×W]`
    pub states: Tensor,
    pub actions: Vec<usize>,
    /// `[k]`
    pub rewards: Tensor,
    /// `[k×F×H×W]`
    pub next_states: Tensor,
    /// `[k]`, 1.0 for terminal transitions.
    pub dones: Tensor,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Stacks transitions in the given order.
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Result<Self> {
        let items: Vec<&Transition> = items.into_iter().collect();
        let Some(first) = items.first() else {
            return Err(Error::NotReady { needed: 1, have: 0 });
        };
        let (frames, flen) = (first.state.frame_count(), first.state.frame_len());
        let side = square_side(flen)?;
        let per = frames * flen;
        let k = items.len();
        let mut states = vec![0.0; k * per];
        let mut next = vec![0.0; k * per];
        for (i, t) in items.iter().enumerate() {
            t.state.write_into(&mut states[i * per..(i + 1) * per]);
            t.next_state.write_into(&mut next[i * per..(i + 1) * per]);
        }
        let dims = [k, frames, side, side];
        Ok(TransitionBatch {
            states: Tensor::new(&dims, states)?,
            actions: items.iter().map(|t| t.action).collect(),
            rewards: Tensor::new(&[k], items.iter().map(|t| t.reward).collect())?,
            next_states: Tensor::new(&dims, next)?,
            dones: Tensor::new(&[k], items.iter().map(|t| f64::from(u8::from(t.done))).collect())?,
        })
    }
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct UniformReplay {
    capacity: usize,
    frames: usize,
    frame_len: usize,
    actions: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl UniformReplay {
    pub fn new(capacity: usize, frames: usize, frame_len: usize, actions: usize) -> Result<Self> {
        if capacity == 0 || frames == 0 || frame_len == 0 || actions == 0 {
            return Err(Error::Config("replay capacity, frames, frame size and actions must be positive".into()));
        }
        Ok(UniformReplay {
            capacity,
            frames,
            frame_len,
            actions,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for (what, obs) in [("state", &t.state), ("next_state", &t.next_state)] {
            if obs.frame_count() != self.frames || obs.frame_len() != self.frame_len {
                return Err(Error::shape(
                    "replay_push",
                    format!(
                        "{what} has {}×{} values, buffer holds {}×{}",
                        obs.frame_count(),
                        obs.frame_len(),
                        self.frames,
                        self.frame_len
                    ),
                ));
            }
        }
        if t.action >= self.actions {
            return Err(Error::InvalidAction { action: t.action, count: self.actions });
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Entry `i` in insertion order (0 = oldest retained).
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.items.len() {
            return None;
        }
        let start = if self.items.len() < self.capacity { 0 } else { self.head };
        self.items.get((start + i) % self.items.len())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).filter_map(move |i| self.get(i))
    }

    /// `k` insertion-order indices drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.len() < k || self.is_empty() {
            return Err(Error::NotReady { needed: k.max(1), have: self.len() });
        }
        Ok((0..k).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<TransitionBatch> {
        let idx = self.sample_indices(k, rng)?;
        TransitionBatch::from_transitions(idx.iter().map(|&i| self.get(i).expect("index in range")))
    }
}
