use std::collections::BTreeMap;

use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `L` consecutive steps stored as one replay slot.
#[derive(Clone, Debug)]
pub struct SequenceRecord {
    /// `[L×S…]`
    pub states: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `[L×S…]`
    pub next_states: Tensor,
    /// 0.0 or 1.0 per step.
    pub dones: Vec<f64>,
}

impl SequenceRecord {
    /// Packs consecutive transitions; state shape becomes `[F×H×W]`.
    pub fn from_transitions(steps: &[Transition]) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::shape("sequence_record", "empty window"));
        };
        let per = first.state.numel();
        let side = super::square_side(first.state.frame_len())?;
        let mut states = vec![0.0; steps.len() * per];
        let mut next = vec![0.0; steps.len() * per];
        for (i, t) in steps.iter().enumerate() {
            if t.state.numel() != per || t.next_state.numel() != per {
                return Err(Error::shape("sequence_record", "observations differ in size"));
            }
            t.state.write_into(&mut states[i * per..(i + 1) * per]);
            t.next_state.write_into(&mut next[i * per..(i + 1) * per]);
        }
        let dims = [steps.len(), first.state.frame_count(), side, side];
        Ok(SequenceRecord {
            states: Tensor::new(&dims, states)?,
            actions: steps.iter().map(|t| t.action).collect(),
            rewards: steps.iter().map(|t| t.reward).collect(),
            next_states: Tensor::new(&dims, next)?,
            dones: steps.iter().map(|t| f64::from(u8::from(t.done))).collect(),
        })
    }
}

/// Batch of `B` sequences, each `L` steps long.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// `[B×L×S…]`
    pub states: Tensor,
    /// Row-major `B×L`.
    pub actions: Vec<usize>,
    /// `[B×L]`
    pub rewards: Tensor,
    /// `[B×L×S…]`
    pub next_states: Tensor,
    /// `[B×L]`
    pub dones: Tensor,
}

impl SequenceBatch {
    /// Keyed view `{s, a, r, s', d}`; actions become `[B×L×1]` floats.
    pub fn into_dict(self) -> Result<BTreeMap<&'static str, Tensor>> {
        let d = self.rewards.dims().to_vec();
        let actions = Tensor::new(&[d[0], d[1], 1], self.actions.iter().map(|&a| a as f64).collect())?;
        Ok(BTreeMap::from([
            ("s", self.states),
            ("a", actions),
            ("r", self.rewards),
            ("s'", self.next_states),
            ("d", self.dones),
        ]))
    }
}

/// FIFO ring of fixed-length sequences backed by flat arrays indexed by slot.
/// Capacity counts sequences, not steps. Arrays grow on demand up to capacity.
#[derive(Clone, Debug)]
pub struct SequenceReplay {
    capacity: usize,
    seq_len: usize,
    state_shape: Vec<usize>,
    batch_size: usize,
    states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<f64>,
    len: usize,
    head: usize,
}

impl SequenceReplay {
    pub fn new(capacity: usize, state_shape: &[usize], batch_size: usize, seq_len: usize) -> Result<Self> {
        if batch_size == 0 || capacity < batch_size {
            return Err(Error::Config(format!(
                "sequence replay needs capacity ≥ batch size ≥ 1 (capacity {capacity}, batch {batch_size})"
            )));
        }
        if seq_len == 0 || state_shape.is_empty() || state_shape.contains(&0) {
            return Err(Error::Config("sequence length and state extents must be positive".into()));
        }
        Ok(SequenceReplay {
            capacity,
            seq_len,
            state_shape: state_shape.to_vec(),
            batch_size,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            len: 0,
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn state_shape(&self) -> &[usize] {
        &self.state_shape
    }

    fn state_numel(&self) -> usize {
        self.state_shape.iter().product()
    }

    fn validate(&self, r: &SequenceRecord) -> Result<()> {
        let l = self.seq_len;
        let mut expected = vec![l];
        expected.extend_from_slice(&self.state_shape);
        let bad = |field: &str, got: String| {
            Err(Error::shape(
                "sequence_add",
                format!("input tensors must have the correct shape: {field} is {got}, expected leading extent {l}"),
            ))
        };
        if r.states.dims() != expected.as_slice() {
            return bad("states", r.states.shape().to_string());
        }
        if r.next_states.dims() != expected.as_slice() {
            return bad("next_states", r.next_states.shape().to_string());
        }
        if r.actions.len() != l {
            return bad("actions", format!("[{}]", r.actions.len()));
        }
        if r.rewards.len() != l {
            return bad("rewards", format!("[{}]", r.rewards.len()));
        }
        if r.dones.len() != l {
            return bad("dones", format!("[{}]", r.dones.len()));
        }
        if r.dones.iter().any(|&d| d != 0.0 && d != 1.0) {
            return Err(Error::shape("sequence_add", "dones must be 0 or 1"));
        }
        Ok(())
    }

    pub fn push(&mut self, r: SequenceRecord) -> Result<()> {
        self.validate(&r)?;
        let (l, s) = (self.seq_len, self.state_numel());
        let states = r.states.to_vec();
        let next = r.next_states.to_vec();
        if self.len < self.capacity {
            self.states.extend_from_slice(&states);
            self.next_states.extend_from_slice(&next);
            self.actions.extend_from_slice(&r.actions);
            self.rewards.extend_from_slice(&r.rewards);
            self.dones.extend_from_slice(&r.dones);
            self.len += 1;
        } else {
            let slot = self.head;
            self.states[slot * l * s..(slot + 1) * l * s].copy_from_slice(&states);
            self.next_states[slot * l * s..(slot + 1) * l * s].copy_from_slice(&next);
            self.actions[slot * l..(slot + 1) * l].copy_from_slice(&r.actions);
            self.rewards[slot * l..(slot + 1) * l].copy_from_slice(&r.rewards);
            self.dones[slot * l..(slot + 1) * l].copy_from_slice(&r.dones);
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    fn slot(&self, i: usize) -> usize {
        if self.len < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        }
    }

    /// Stored sequence `i` in insertion order (0 = oldest retained).
    pub fn get(&self, i: usize) -> Option<SequenceRecord> {
        if i >= self.len {
            return None;
        }
        let (l, s) = (self.seq_len, self.state_numel());
        let slot = self.slot(i);
        let mut dims = vec![l];
        dims.extend_from_slice(&self.state_shape);
        Some(SequenceRecord {
            states: Tensor::new(&dims, self.states[slot * l * s..(slot + 1) * l * s].to_vec()).ok()?,
            actions: self.actions[slot * l..(slot + 1) * l].to_vec(),
            rewards: self.rewards[slot * l..(slot + 1) * l].to_vec(),
            next_states: Tensor::new(&dims, self.next_states[slot * l * s..(slot + 1) * l * s].to_vec()).ok()?,
            dones: self.dones[slot * l..(slot + 1) * l].to_vec(),
        })
    }

    /// `B` sequences drawn uniformly with replacement.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<SequenceBatch> {
        let b = self.batch_size;
        if self.len < b {
            return Err(Error::NotReady { needed: b, have: self.len });
        }
        let (l, s) = (self.seq_len, self.state_numel());
        let mut states = Vec::with_capacity(b * l * s);
        let mut next = Vec::with_capacity(b * l * s);
        let mut actions = Vec::with_capacity(b * l);
        let mut rewards = Vec::with_capacity(b * l);
        let mut dones = Vec::with_capacity(b * l);
        for _ in 0..b {
            let slot = self.slot(rng.random_range(0..self.len));
            states.extend_from_slice(&self.states[slot * l * s..(slot + 1) * l * s]);
            next.extend_from_slice(&self.next_states[slot * l * s..(slot + 1) * l * s]);
            actions.extend_from_slice(&self.actions[slot * l..(slot + 1) * l]);
            rewards.extend_from_slice(&self.rewards[slot * l..(slot + 1) * l]);
            dones.extend_from_slice(&self.dones[slot * l..(slot + 1) * l]);
        }
        let mut dims = vec![b, l];
        dims.extend_from_slice(&self.state_shape);
        Ok(SequenceBatch {
            states: Tensor::new(&dims, states)?,
            actions,
            rewards: Tensor::new(&[b, l], rewards)?,
            next_states: Tensor::new(&dims, next)?,
            dones: Tensor::new(&[b, l], dones)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn record(l: usize, s: &[usize], base: f64) -> SequenceRecord {
        let n: usize = s.iter().product();
        let mut dims = vec![l];
        dims.extend_from_slice(s);
        SequenceRecord {
            states: Tensor::new(&dims, (0..l * n).map(|i| base + i as f64).collect()).unwrap(),
            actions: (0..l).map(|i| i % 3).collect(),
            rewards: (0..l).map(|i| base - i as f64).collect(),
            next_states: Tensor::new(&dims, (0..l * n).map(|i| base + 0.5 + i as f64).collect()).unwrap(),
            dones: (0..l).map(|i| f64::from(u8::from(i + 1 == l))).collect(),
        }
    }

    #[test]
    fn round_trip_bitwise() {
        let mut buf = SequenceReplay::new(4, &[2, 3], 1, 8).unwrap();
        let r = record(8, &[2, 3], 0.1);
        buf.push(r.clone()).unwrap();
        let back = buf.get(0).unwrap();
        assert_eq!(back.states.to_vec(), r.states.to_vec());
        assert_eq!(back.next_states.to_vec(), r.next_states.to_vec());
        assert_eq!(back.actions, r.actions);
        assert_eq!(back.rewards, r.rewards);
        assert_eq!(back.dones, r.dones);
    }

    #[test]
    fn ragged_fields_rejected() {
        let mut buf = SequenceReplay::new(4, &[2], 1, 8).unwrap();
        let mut r = record(8, &[2], 0.0);
        r.actions.pop();
        let err = buf.push(r).unwrap_err().to_string();
        assert!(err.contains("correct shape"), "{err}");
        assert!(buf.push(record(7, &[2], 0.0)).is_err());
        let mut r = record(8, &[2], 0.0);
        r.dones[0] = 0.5;
        assert!(buf.push(r).is_err());
    }

    #[test]
    fn capacity_counts_sequences() {
        let mut buf = SequenceReplay::new(2, &[1], 1, 5).unwrap();
        for i in 0..3 {
            buf.push(record(5, &[1], i as f64 * 100.0)).unwrap();
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(0).unwrap().rewards[0], 100.0);
        assert_eq!(buf.get(1).unwrap().rewards[0], 200.0);
    }

    #[test]
    fn sample_shape_and_order() {
        let mut buf = SequenceReplay::new(8, &[4, 6, 6], 4, 8).unwrap();
        let r = record(8, &[4, 6, 6], 1.0);
        buf.push(r.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let small = SequenceReplay::new(8, &[4, 6, 6], 4, 8).unwrap();
        assert!(matches!(small.sample(&mut rng), Err(Error::NotReady { .. })));
        let mut single = SequenceReplay::new(8, &[4, 6, 6], 1, 8).unwrap();
        single.push(r.clone()).unwrap();
        let one = single.sample(&mut rng).unwrap();
        assert_eq!(one.states.to_vec(), r.states.to_vec());
        for _ in 0..3 {
            buf.push(r.clone()).unwrap();
        }
        let b = buf.sample(&mut rng).unwrap();
        assert_eq!(b.states.dims(), &[4, 8, 4, 6, 6]);
        assert_eq!(b.rewards.dims(), &[4, 8]);
        let dict = b.into_dict().unwrap();
        assert_eq!(dict["a"].dims(), &[4, 8, 1]);
        assert_eq!(dict["r"].to_vec()[..8], r.rewards[..]);
    }
}
