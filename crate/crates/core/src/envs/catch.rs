use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{paint_cell, EnvSpec, Environment, RawFrame, Step, FRAME_HEIGHT, FRAME_WIDTH, GRID};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

const BALL: [u8; 3] = [255, 255, 255];
const PADDLE: [u8; 3] = [200, 200, 200];
/// Mid-gray, so the background preprocesses to about 0 instead of −1.
const BACKGROUND: [u8; 3] = [128, 127, 128];

/// A ball drops one row per tick from a seeded column in row 0; the paddle
/// moves along the bottom row. Reaching the bottom ends the episode with +1
/// if the paddle is under the ball, −1 otherwise. Episodes last exactly
/// `GRID − 1` ticks, enough to reach any column from the centre start.
#[derive(Clone, Debug)]
pub struct Catch {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    ball_row: usize,
    ball_col: usize,
    paddle: usize,
    steps: usize,
    done: bool,
}

impl Catch {
    pub fn new(seed: u64) -> Self {
        let spec = EnvSpec {
            name: "catch".into(),
            action_labels: vec!["LEFT".into(), "STAY".into(), "RIGHT".into()],
            frame_height: FRAME_HEIGHT,
            frame_width: FRAME_WIDTH,
            max_steps: GRID - 1,
            seed,
        };
        let mut env = Catch {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ball_row: 0,
            ball_col: 0,
            paddle: GRID / 2,
            steps: 0,
            done: false,
        };
        env.reset(None);
        env
    }

    pub fn ball(&self) -> (usize, usize) {
        (self.ball_row, self.ball_col)
    }

    pub fn paddle(&self) -> usize {
        self.paddle
    }

    /// Starts an episode with the ball in a chosen column.
    pub fn reset_with_column(&mut self, col: usize) -> RawFrame {
        self.ball_row = 0;
        self.ball_col = col.min(GRID - 1);
        self.paddle = GRID / 2;
        self.steps = 0;
        self.done = false;
        self.render()
    }

    pub fn render(&self) -> RawFrame {
        let mut f = RawFrame::filled(FRAME_HEIGHT, FRAME_WIDTH, BACKGROUND);
        paint_cell(&mut f, GRID - 1, self.paddle, PADDLE);
        paint_cell(&mut f, self.ball_row, self.ball_col, BALL);
        f
    }
}

impl Environment for Catch {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> RawFrame {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let col = self.rng.random_range(0..GRID);
        self.reset_with_column(col)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= 3 {
            return Err(Error::InvalidAction { action, count: 3 });
        }
        if self.done {
            return Ok(Step { frame: self.render(), reward: 0.0, done: true });
        }
        match action {
            LEFT => self.paddle = self.paddle.saturating_sub(1),
            RIGHT => self.paddle = (self.paddle + 1).min(GRID - 1),
            _ => {}
        }
        self.ball_row += 1;
        self.steps += 1;
        let mut reward = 0.0;
        if self.ball_row == GRID - 1 {
            self.done = true;
            reward = if self.paddle == self.ball_col { 1.0 } else { -1.0 };
        }
        Ok(Step { frame: self.render(), reward, done: self.done })
    }

    fn steps(&self) -> usize {
        self.steps
    }
}

/// Moves toward the ball column; optimal.
pub fn chase_action(env: &Catch) -> usize {
    let (_, col) = env.ball();
    match env.paddle().cmp(&col) {
        std::cmp::Ordering::Less => RIGHT,
        std::cmp::Ordering::Greater => LEFT,
        std::cmp::Ordering::Equal => STAY,
    }
}
