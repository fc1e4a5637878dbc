//! Experience replay: a uniform single-transition ring and a sequence ring.

mod sequence;
mod snapshot;
mod uniform;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use sequence::{SequenceBatch, SequenceRecord, SequenceReplay};
pub use snapshot::{read_uniform, write_uniform, SNAPSHOT_MAGIC};
pub use uniform::{TransitionBatch, UniformReplay};

/// One preprocessed frame, shared between consecutive observations.
pub type Frame = Arc<[f64]>;

/// A stack of `F` frames of equal size, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    frames: Vec<Frame>,
}

impl Observation {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::shape("observation", "no frames"));
        };
        if first.is_empty() || frames.iter().any(|f| f.len() != first.len()) {
            return Err(Error::shape("observation", "frames differ in size"));
        }
        Ok(Observation { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_len(&self) -> usize {
        self.frames[0].len()
    }

    pub fn numel(&self) -> usize {
        self.frame_count() * self.frame_len()
    }

    /// Copies the stacked values into `out` (length `numel`).
    pub fn write_into(&self, out: &mut [f64]) {
        for (chunk, f) in out.chunks_exact_mut(self.frame_len()).zip(&self.frames) {
            chunk.copy_from_slice(f);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.numel()];
        self.write_into(&mut out);
        out
    }

    /// `[1×F×H×W]` tensor for a square frame.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let side = square_side(self.frame_len())?;
        Tensor::new(&[1, self.frame_count(), side, side], self.to_vec())
    }
}

pub(crate) fn square_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(Error::shape("observation", format!("frame of {len} values is not square")));
    }
    Ok(side)
}

/// Single-step experience `(s, a, r, s', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}
