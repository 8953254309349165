use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_step, to_units, EnvStepResult, Environment, Observation, Ram, Screen, RAM_SIZE,
    UNITS_PER_CELL,
};
use crate::error::Result;

const HEIGHT: usize = 20;
const WIDTH: usize = 16;
const PADDLE_ROW: usize = HEIGHT - 1;
/// Screen rows holding the three brick rows.
const BRICK_ROWS: [usize; 3] = [2, 3, 4];
const FULL_ROW: u16 = u16::MAX;

const NOOP: usize = 0;
const FIRE: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

/// Ball velocity. Stored in RAM as a code: 0 held on the paddle, 1..=4 for
/// `(dx, dy)` in `(-1,-1), (+1,-1), (-1,+1), (+1,+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Velocity {
    Held,
    Moving { dx: i8, dy: i8 },
}

impl Velocity {
    pub fn code(self) -> u8 {
        match self {
            Velocity::Held => 0,
            Velocity::Moving { dx, dy } => 1 + u8::from(dx > 0) + 2 * u8::from(dy > 0),
        }
    }
}

/// Paddle, ball and three rows of sixteen one-cell bricks.
///
/// Fire launches a held ball. +1 per brick; losing the ball or clearing
/// every brick ends the episode.
///
/// RAM map: `[0]` paddle x, `[1]` ball x, `[2]` ball y (position units),
/// `[3]` velocity code, `[4..=9]` brick bitmasks (two little-endian bytes per
/// row, top row first), `[10]` score mod 256, rest zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroBreakout {
    paddle_x: u8,
    ball_x: u8,
    ball_y: u8,
    velocity: Velocity,
    bricks: [u16; 3],
    score: u32,
    terminal: bool,
    rng: ChaCha8Rng,
}

impl Default for MicroBreakout {
    fn default() -> Self {
        Self::new()
    }
}

impl MicroBreakout {
    pub fn new() -> Self {
        let mut env = Self {
            paddle_x: 0,
            ball_x: 0,
            ball_y: 0,
            velocity: Velocity::Held,
            bricks: [FULL_ROW; 3],
            score: 0,
            terminal: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0);
        env
    }

    pub fn paddle_x(&self) -> u8 {
        self.paddle_x
    }
    pub fn ball(&self) -> (u8, u8) {
        (self.ball_x, self.ball_y)
    }
    pub fn velocity(&self) -> Velocity {
        self.velocity
    }
    pub fn bricks(&self) -> [u16; 3] {
        self.bricks
    }
    pub fn score(&self) -> u32 {
        self.score
    }

    fn cell(units: u8) -> usize {
        (units / UNITS_PER_CELL) as usize
    }

    fn brick_at(&self, x: usize, y: usize) -> Option<usize> {
        let row = BRICK_ROWS.iter().position(|&r| r == y)?;
        (self.bricks[row] >> x & 1 == 1).then_some(row)
    }

    fn ram(&self) -> Ram {
        let mut ram = [0u8; RAM_SIZE];
        ram[0] = self.paddle_x;
        ram[1] = self.ball_x;
        ram[2] = self.ball_y;
        ram[3] = self.velocity.code();
        for (row, mask) in self.bricks.iter().enumerate() {
            let [lo, hi] = mask.to_le_bytes();
            ram[4 + 2 * row] = lo;
            ram[5 + 2 * row] = hi;
        }
        ram[10] = (self.score % 256) as u8;
        ram
    }

    fn screen(&self) -> Screen {
        let mut s = Screen::blank(HEIGHT, WIDTH);
        for (row, &y) in BRICK_ROWS.iter().enumerate() {
            for x in 0..WIDTH {
                if self.bricks[row] >> x & 1 == 1 {
                    s.set(y, x, 96 + 32 * row as u8);
                }
            }
        }
        let px = Self::cell(self.paddle_x);
        for col in px - 1..=px + 1 {
            s.set(PADDLE_ROW, col, 200);
        }
        s.set(Self::cell(self.ball_y), Self::cell(self.ball_x), 255);
        s
    }

    fn advance_ball(&mut self, px: usize) -> f64 {
        let Velocity::Moving { mut dx, mut dy } = self.velocity else {
            self.ball_x = to_units(px);
            self.ball_y = to_units(PADDLE_ROW - 1);
            return 0.0;
        };
        let bx = Self::cell(self.ball_x) as i32;
        let by = Self::cell(self.ball_y) as i32;
        let mut nx = bx + dx as i32;
        if !(0..WIDTH as i32).contains(&nx) {
            dx = -dx;
            nx = bx + dx as i32;
        }
        let mut ny = by + dy as i32;
        if ny < 0 {
            dy = -dy;
            ny = by + dy as i32;
        }
        let mut reward = 0.0;
        if let Some(row) = self.brick_at(nx as usize, ny as usize) {
            self.bricks[row] &= !(1 << nx);
            self.score += 1;
            reward = 1.0;
            dy = -dy;
            nx = bx;
            ny = by;
        } else if ny as usize == PADDLE_ROW {
            let offset = nx - px as i32;
            if offset.abs() <= 1 {
                dy = -1;
                if offset != 0 {
                    dx = offset.signum() as i8;
                }
                ny = by;
            } else {
                self.terminal = true;
            }
        }
        self.ball_x = to_units(nx as usize);
        self.ball_y = to_units(ny as usize);
        self.velocity = Velocity::Moving { dx, dy };
        if self.bricks.iter().all(|&m| m == 0) {
            self.terminal = true;
        }
        reward
    }
}

impl Environment for MicroBreakout {
    fn name(&self) -> &'static str {
        "micro_breakout"
    }

    fn action_count(&self) -> usize {
        4
    }

    fn screen_shape(&self) -> Option<(usize, usize)> {
        Some((HEIGHT, WIDTH))
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let px = self.rng.gen_range(1..WIDTH - 1);
        self.paddle_x = to_units(px);
        self.ball_x = to_units(px);
        self.ball_y = to_units(PADDLE_ROW - 1);
        self.velocity = Velocity::Held;
        self.bricks = [FULL_ROW; 3];
        self.score = 0;
        self.terminal = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        check_step(action, 4, self.terminal)?;
        let px = Self::cell(self.paddle_x);
        let px = match action {
            LEFT if px > 1 => px - 1,
            RIGHT if px < WIDTH - 2 => px + 1,
            NOOP | FIRE | LEFT | RIGHT => px,
            _ => unreachable!(),
        };
        self.paddle_x = to_units(px);
        if action == FIRE && self.velocity == Velocity::Held {
            let dx = if self.rng.gen::<bool>() { 1 } else { -1 };
            self.velocity = Velocity::Moving { dx, dy: -1 };
        }
        let reward = self.advance_ball(px);
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
