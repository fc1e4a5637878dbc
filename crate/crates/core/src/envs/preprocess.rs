use std::collections::VecDeque;
use std::sync::Arc;

use super::RawFrame;
use crate::error::{Error, Result};
use crate::replay::{Frame, Observation};
use crate::tensor::Tensor;

pub const RESIZE_HEIGHT: usize = 110;
pub const RESIZE_WIDTH: usize = 84;
pub const CROP: usize = 84;

/// Grayscale in [0,1] using integer Rec. 601 weights, so pure white maps to exactly 1.0.
fn luma(frame: &RawFrame) -> Vec<f64> {
    frame
        .data
        .chunks_exact(3)
        .map(|p| f64::from(299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2])) / 255_000.0)
        .collect()
}

/// Source sample positions for half-pixel-centred bilinear resampling.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (x.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn resize(gray: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let cols = taps(w, out_w);
    let mut horiz = vec![0.0; h * out_w];
    for r in 0..h {
        let row = &gray[r * w..(r + 1) * w];
        for (c, &(c0, c1, t)) in cols.iter().enumerate() {
            horiz[r * out_w + c] = lerp(row[c0], row[c1], t);
        }
    }
    let rows = taps(h, out_h);
    let mut out = vec![0.0; out_h * out_w];
    for (r, &(r0, r1, t)) in rows.iter().enumerate() {
        for c in 0..out_w {
            out[r * out_w + c] = lerp(horiz[r0 * out_w + c], horiz[r1 * out_w + c], t);
        }
    }
    out
}

/// Grayscale, resize to 110×84, centre-crop to 84×84, normalize to [−1,1].
/// Returns 84·84 row-major values.
pub fn preprocess_values(frame: &RawFrame) -> Result<Vec<f64>> {
    if frame.height == 0 || frame.width == 0 || frame.data.len() != frame.height * frame.width * 3 {
        return Err(Error::shape(
            "preprocess",
            format!("{} bytes for a {}×{} RGB frame", frame.data.len(), frame.height, frame.width),
        ));
    }
    let resized = resize(&luma(frame), frame.height, frame.width, RESIZE_HEIGHT, RESIZE_WIDTH);
    let top = (RESIZE_HEIGHT - CROP) / 2;
    let left = (RESIZE_WIDTH - CROP) / 2;
    let mut out = Vec::with_capacity(CROP * CROP);
    for r in top..top + CROP {
        for c in left..left + CROP {
            out.push((resized[r * RESIZE_WIDTH + c] - 0.5) / 0.5);
        }
    }
    Ok(out)
}

/// `[84×84]` tensor of the preprocessed frame.
pub fn preprocess_frame(frame: &RawFrame) -> Result<Tensor> {
    Tensor::new(&[CROP, CROP], preprocess_values(frame)?)
}

/// The last `F` preprocessed frames, oldest first.
#[derive(Clone, Debug)]
pub struct FrameStack {
    depth: usize,
    frames: VecDeque<Frame>,
}

impl FrameStack {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("frame stack depth must be positive".into()));
        }
        Ok(FrameStack { depth, frames: VecDeque::with_capacity(depth) })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Fills the stack with copies of the first frame of an episode.
    pub fn reset(&mut self, frame: Vec<f64>) -> Observation {
        let f: Frame = Arc::from(frame);
        self.frames.clear();
        self.frames.extend(std::iter::repeat_n(f, self.depth));
        self.observation()
    }

    /// Drops the oldest frame and appends `frame` at index `F−1`.
    pub fn push(&mut self, frame: Vec<f64>) -> Result<Observation> {
        let Some(front) = self.frames.front() else {
            return Err(Error::Config("frame stack used before reset".into()));
        };
        if front.len() != frame.len() {
            return Err(Error::shape("frame_stack", format!("frame of {} values, stack holds {}", frame.len(), front.len())));
        }
        self.frames.pop_front();
        self.frames.push_back(Arc::from(frame));
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        Observation::new(self.frames.iter().cloned().collect()).expect("stack frames share one size")
    }

    /// `[F×84×84]`
    pub fn tensor(&self) -> Result<Tensor> {
        let obs = self.observation();
        let side = crate::replay::square_side(obs.frame_len())?;
        Tensor::new(&[self.depth, side, side], obs.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::envs::{Catch, FRAME_HEIGHT, FRAME_WIDTH};

    #[test]
    fn white_and_black_extremes() {
        let white = preprocess_values(&RawFrame::filled(210, 160, [255, 255, 255])).unwrap();
        assert_eq!(white.len(), 84 * 84);
        assert!(white.iter().all(|&v| v == 1.0));
        let black = preprocess_values(&RawFrame::filled(FRAME_HEIGHT, FRAME_WIDTH, [0, 0, 0])).unwrap();
        assert!(black.iter().all(|&v| v == -1.0));
        assert_eq!(preprocess_frame(&RawFrame::filled(5, 7, [9, 9, 9])).unwrap().dims(), &[84, 84]);
    }

    #[test]
    fn luma_weights() {
        let red = preprocess_values(&RawFrame::filled(4, 4, [255, 0, 0])).unwrap();
        assert!((red[0] - (0.299 * 2.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn grid_cells_map_to_blocks() {
        let mut env = Catch::new(0);
        let v = preprocess_values(&env.reset_with_column(5)).unwrap();
        let bg = v[40 * 84 + 80];
        assert!(bg.abs() < 1e-3, "background {bg}");
        // Ball cell (0,5) becomes rows 0..4, cols 20..24, exactly white.
        for r in 0..4 {
            for c in 20..24 {
                assert_eq!(v[r * 84 + c], 1.0);
            }
            assert_eq!(v[r * 84 + 19], bg);
            assert_eq!(v[r * 84 + 24], bg);
        }
        assert_eq!(v[4 * 84 + 20], bg);
    }

    #[test]
    fn stack_order() {
        let mut s = FrameStack::new(3).unwrap();
        let obs = s.reset(vec![0.0; 4]);
        assert!(obs.frames().iter().all(|f| f[0] == 0.0));
        for i in 1..=3 {
            s.push(vec![i as f64; 4]).unwrap();
        }
        let firsts: Vec<f64> = s.observation().frames().iter().map(|f| f[0]).collect();
        assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.tensor().unwrap().dims(), &[3, 2, 2]);
        assert!(s.push(vec![0.0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn output_in_range(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
            let mut x = seed;
            let data = (0..h * w * 3).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 56) as u8 }).collect();
            let v = preprocess_values(&RawFrame { height: h, width: w, data }).unwrap();
            prop_assert!(v.iter().all(|&p| (-1.0..=1.0).contains(&p)));
        }
    }
}
