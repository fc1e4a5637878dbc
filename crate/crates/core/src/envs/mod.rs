//! Built-in pixel environments and the frame pipeline feeding the networks.
//!
//! Both games live on a 21×21 grid rendered into a 220×168 RGB frame: each
//! cell is 8×8 pixels and the grid occupies rows 26..194. Halving to 110×84
//! and cropping rows 13..97 therefore maps every cell to an exact 4×4 block.

pub mod catch;
pub mod gauntlet;
mod preprocess;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use catch::Catch;
pub use gauntlet::Gauntlet;
pub use preprocess::{preprocess_frame, preprocess_values, FrameStack, CROP, RESIZE_HEIGHT, RESIZE_WIDTH};

/// Grid extent shared by the built-in games.
pub const GRID: usize = 21;
/// Pixels per grid cell.
pub const CELL: usize = 8;
pub const FRAME_HEIGHT: usize = 220;
pub const FRAME_WIDTH: usize = GRID * CELL;
/// First pixel row of the grid inside the frame.
pub const GRID_TOP: usize = 26;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub action_labels: Vec<String>,
    pub frame_height: usize,
    pub frame_width: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        self.action_labels.len()
    }
}

/// RGB bytes, row-major `[H×W×3]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RawFrame {
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        RawFrame { height, width, data: rgb.repeat(height * width) }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn fill_rect(&mut self, top: usize, left: usize, h: usize, w: usize, rgb: [u8; 3]) {
        for r in top..(top + h).min(self.height) {
            for c in left..(left + w).min(self.width) {
                let i = (r * self.width + c) * 3;
                self.data[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    /// Binary PPM (P6).
    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_ppm(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Outcome of one tick.
#[derive(Clone, Debug)]
pub struct Step {
    pub frame: RawFrame,
    pub reward: f64,
    pub done: bool,
}

/// A seeded, deterministic game.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts an episode. `Some(seed)` reseeds the game RNG; `None` continues
    /// the current stream.
    fn reset(&mut self, seed: Option<u64>) -> RawFrame;

    /// Advances one tick. Errors on an out-of-range action.
    fn step(&mut self, action: usize) -> Result<Step>;

    /// Ticks taken in the current episode.
    fn steps(&self) -> usize;

    fn action_count(&self) -> usize {
        self.spec().action_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Catch,
    Gauntlet,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Catch => "catch",
            EnvKind::Gauntlet => "gauntlet",
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::Catch => 3,
            EnvKind::Gauntlet => 4,
        }
    }

    pub fn build(self, seed: u64) -> Box<dyn Environment> {
        match self {
            EnvKind::Catch => Box::new(Catch::new(seed)),
            EnvKind::Gauntlet => Box::new(Gauntlet::new(seed)),
        }
    }
}

/// Paints grid cell `(row, col)`.
pub(crate) fn paint_cell(frame: &mut RawFrame, row: usize, col: usize, rgb: [u8; 3]) {
    frame.fill_rect(GRID_TOP + row * CELL, col * CELL, CELL, CELL, rgb);
}

pub(crate) fn blank_frame() -> RawFrame {
    RawFrame::filled(FRAME_HEIGHT, FRAME_WIDTH, [0, 0, 0])
}
