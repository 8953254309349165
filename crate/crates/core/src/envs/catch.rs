use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_step, to_units, EnvStepResult, Environment, Observation, Ram, Screen, RAM_SIZE,
    UNITS_PER_CELL,
};
use crate::error::Result;

const SIZE: usize = 16;
const PADDLE_ROW: usize = SIZE - 1;
/// Episodes end after this many catches if nothing was missed first.
pub const DROPS_PER_EPISODE: u32 = 10;

const NOOP: usize = 0;
const LEFT: usize = 1;
const RIGHT: usize = 2;

/// A paddle on the bottom row catches objects falling one row per frame.
///
/// +1 per catch; the first miss ends the episode. The paddle is three cells
/// wide and centred on `paddle_x`.
///
/// RAM map: `[0]` paddle x, `[1]` object x, `[2]` object y (all in position
/// units), `[3]` score mod 256, `[4]` frame counter mod 256, rest zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroCatch {
    paddle_x: u8,
    object_x: u8,
    object_y: u8,
    score: u32,
    frame: u32,
    caught: u32,
    terminal: bool,
    rng: ChaCha8Rng,
}

impl Default for MicroCatch {
    fn default() -> Self {
        Self::new()
    }
}

impl MicroCatch {
    pub fn new() -> Self {
        let mut env = Self {
            paddle_x: 0,
            object_x: 0,
            object_y: 0,
            score: 0,
            frame: 0,
            caught: 0,
            terminal: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0);
        env
    }

    pub fn paddle_x(&self) -> u8 {
        self.paddle_x
    }
    pub fn object_x(&self) -> u8 {
        self.object_x
    }
    pub fn object_y(&self) -> u8 {
        self.object_y
    }
    pub fn score(&self) -> u32 {
        self.score
    }
    pub fn frame(&self) -> u32 {
        self.frame
    }

    fn cell(units: u8) -> usize {
        (units / UNITS_PER_CELL) as usize
    }

    fn spawn(&mut self) {
        self.object_x = to_units(self.rng.gen_range(0..SIZE));
        self.object_y = 0;
    }

    fn ram(&self) -> Ram {
        let mut ram = [0u8; RAM_SIZE];
        ram[0] = self.paddle_x;
        ram[1] = self.object_x;
        ram[2] = self.object_y;
        ram[3] = (self.score % 256) as u8;
        ram[4] = (self.frame % 256) as u8;
        ram
    }

    fn screen(&self) -> Screen {
        let mut s = Screen::blank(SIZE, SIZE);
        let px = Self::cell(self.paddle_x);
        for col in px - 1..=px + 1 {
            s.set(PADDLE_ROW, col, 255);
        }
        s.set(Self::cell(self.object_y), Self::cell(self.object_x), 160);
        s
    }
}

impl Environment for MicroCatch {
    fn name(&self) -> &'static str {
        "micro_catch"
    }

    fn action_count(&self) -> usize {
        3
    }

    fn screen_shape(&self) -> Option<(usize, usize)> {
        Some((SIZE, SIZE))
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.paddle_x = to_units(self.rng.gen_range(1..SIZE - 1));
        self.score = 0;
        self.frame = 0;
        self.caught = 0;
        self.terminal = false;
        self.spawn();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        check_step(action, 3, self.terminal)?;
        let px = Self::cell(self.paddle_x);
        let px = match action {
            LEFT if px > 1 => px - 1,
            RIGHT if px < SIZE - 2 => px + 1,
            NOOP | LEFT | RIGHT => px,
            _ => unreachable!(),
        };
        self.paddle_x = to_units(px);
        self.object_y += UNITS_PER_CELL;
        self.frame += 1;

        let mut reward = 0.0;
        if Self::cell(self.object_y) == PADDLE_ROW {
            if Self::cell(self.object_x).abs_diff(px) <= 1 {
                reward = 1.0;
                self.score += 1;
                self.caught += 1;
                if self.caught >= DROPS_PER_EPISODE {
                    self.terminal = true;
                } else {
                    self.spawn();
                }
            } else {
                self.terminal = true;
            }
        }
        Ok(EnvStepResult {
            observation: self.observation(),
            reward,
            terminal: self.terminal,
        })
    }

    fn observation(&self) -> Observation {
        Observation {
            ram: self.ram(),
            screen: self.screen(),
        }
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }
}
