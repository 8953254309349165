use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_step, to_units, EnvStepResult, Environment, Observation, Ram, Screen, RAM_SIZE,
    UNITS_PER_CELL,
};
use crate::error::Result;

const SIZE: usize = 20;
const SURFACE_ROW: usize = 0;
const DEEPEST_ROW: usize = SIZE - 2;
const LANES: usize = 8;
pub const MAX_OXYGEN: u8 = 64;
const MAX_DIVERS: u8 = 6;
const DELIVERY_BONUS: u32 = 5;
/// Each empty lane spawns with probability 1/SPAWN_ODDS per frame.
const SPAWN_ODDS: u32 = 16;

const NOOP: usize = 0;
const FIRE: usize = 1;
const UP: usize = 2;
const DOWN: usize = 3;
const LEFT: usize = 4;
const RIGHT: usize = 5;

fn lane_row(lane: usize) -> usize {
    3 + 2 * lane
}

/// Even lanes drift right, odd lanes drift left.
fn lane_dir(lane: usize) -> i32 {
    if lane % 2 == 0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotContent {
    Empty,
    Enemy { x: u8 },
    Diver { x: u8 },
}

impl SlotContent {
    /// RAM byte: 0 empty, `1 + x` enemy, `129 + x` diver (`x` in cells).
    pub fn code(self) -> u8 {
        match self {
            SlotContent::Empty => 0,
            SlotContent::Enemy { x } => 1 + x,
            SlotContent::Diver { x } => 129 + x,
        }
    }

    fn x(self) -> Option<u8> {
        match self {
            SlotContent::Empty => None,
            SlotContent::Enemy { x } | SlotContent::Diver { x } => Some(x),
        }
    }

    fn with_x(self, x: u8) -> Self {
        match self {
            SlotContent::Empty => SlotContent::Empty,
            SlotContent::Enemy { .. } => SlotContent::Enemy { x },
            SlotContent::Diver { .. } => SlotContent::Diver { x },
        }
    }
}

/// A submarine shoots enemies and rescues divers in eight horizontal lanes.
///
/// Fire destroys every enemy in the submarine's lane (+1). Touching a diver
/// picks it up; surfacing with divers aboard delivers them (+5) and
/// surfacing always refills oxygen. Oxygen drops by one per frame under
/// water and the episode ends when it runs out or an enemy rams the sub.
///
/// RAM map: `[0]` sub x, `[1]` sub y (position units), `[2]` oxygen, `[3]`
/// divers held, `[4]` score mod 256, `[5..=12]` lane slots (see
/// [`SlotContent::code`]), rest zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroDiver {
    sub_x: u8,
    sub_y: u8,
    oxygen: u8,
    divers: u8,
    score: u32,
    slots: [SlotContent; LANES],
    frame: u64,
    terminal: bool,
    rng: ChaCha8Rng,
}

impl Default for MicroDiver {
    fn default() -> Self {
        Self::new()
    }
}

impl MicroDiver {
    pub fn new() -> Self {
        let mut env = Self {
            sub_x: 0,
            sub_y: 0,
            oxygen: MAX_OXYGEN,
            divers: 0,
            score: 0,
            slots: [SlotContent::Empty; LANES],
            frame: 0,
            terminal: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0);
        env
    }

    pub fn sub(&self) -> (u8, u8) {
        (self.sub_x, self.sub_y)
    }
    pub fn oxygen(&self) -> u8 {
        self.oxygen
    }
    pub fn divers(&self) -> u8 {
        self.divers
    }
    pub fn score(&self) -> u32 {
        self.score
    }
    pub fn slots(&self) -> [SlotContent; LANES] {
        self.slots
    }

    fn cell(units: u8) -> usize {
        (units / UNITS_PER_CELL) as usize
    }

    fn sub_lane(&self) -> Option<usize> {
        (0..LANES).find(|&l| lane_row(l) == Self::cell(self.sub_y))
    }

    fn ram(&self) -> Ram {
        let mut ram = [0u8; RAM_SIZE];
        ram[0] = self.sub_x;
        ram[1] = self.sub_y;
        ram[2] = self.oxygen;
        ram[3] = self.divers;
        ram[4] = (self.score % 256) as u8;
        for (i, slot) in self.slots.iter().enumerate() {
            ram[5 + i] = slot.code();
        }
        ram
    }

    fn screen(&self) -> Screen {
        let mut s = Screen::blank(SIZE, SIZE);
        for row in SURFACE_ROW + 1..SIZE {
            for col in 0..SIZE {
                s.set(row, col, 24);
            }
        }
        for col in 0..SIZE {
            s.set(SURFACE_ROW, col, 64);
        }
        // oxygen gauge along the bottom row
        let gauge = self.oxygen as usize * SIZE / MAX_OXYGEN as usize;
        for col in 0..gauge {
            s.set(SIZE - 1, col, 120);
        }
        for (lane, slot) in self.slots.iter().enumerate() {
            match *slot {
                SlotContent::Empty => {}
                SlotContent::Enemy { x } => s.set(lane_row(lane), x as usize, 160),
                SlotContent::Diver { x } => s.set(lane_row(lane), x as usize, 208),
            }
        }
        s.set(Self::cell(self.sub_y), Self::cell(self.sub_x), 255);
        s
    }

    fn resolve_collisions(&mut self) {
        let Some(lane) = self.sub_lane() else { return };
        let sx = Self::cell(self.sub_x) as u8;
        match self.slots[lane] {
            SlotContent::Enemy { x } if x == sx => self.terminal = true,
            SlotContent::Diver { x } if x == sx => {
                self.divers = (self.divers + 1).min(MAX_DIVERS);
                self.slots[lane] = SlotContent::Empty;
            }
            _ => {}
        }
    }
}

impl Environment for MicroDiver {
    fn name(&self) -> &'static str {
        "micro_diver"
    }

    fn action_count(&self) -> usize {
        6
    }

    fn screen_shape(&self) -> Option<(usize, usize)> {
        Some((SIZE, SIZE))
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.sub_x = to_units(self.rng.gen_range(0..SIZE));
        self.sub_y = to_units(SURFACE_ROW);
        self.oxygen = MAX_OXYGEN;
        self.divers = 0;
        self.score = 0;
        self.slots = [SlotContent::Empty; LANES];
        self.frame = 0;
        self.terminal = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        check_step(action, 6, self.terminal)?;
        let score_before = self.score;
        let (mut sx, mut sy) = (Self::cell(self.sub_x), Self::cell(self.sub_y));
        match action {
            UP if sy > SURFACE_ROW => sy -= 1,
            DOWN if sy < DEEPEST_ROW => sy += 1,
            LEFT if sx > 0 => sx -= 1,
            RIGHT if sx < SIZE - 1 => sx += 1,
            FIRE => {
                if let Some(lane) = self.sub_lane() {
                    if let SlotContent::Enemy { .. } = self.slots[lane] {
                        self.slots[lane] = SlotContent::Empty;
                        self.score += 1;
                    }
                }
            }
            NOOP | UP | DOWN | LEFT | RIGHT => {}
            _ => unreachable!(),
        }
        self.sub_x = to_units(sx);
        self.sub_y = to_units(sy);

        if sy == SURFACE_ROW {
            if self.divers > 0 {
                self.score += DELIVERY_BONUS;
                self.divers = 0;
            }
            self.oxygen = MAX_OXYGEN;
        } else {
            self.oxygen -= 1;
            if self.oxygen == 0 {
                self.terminal = true;
            }
        }

        self.resolve_collisions();
        if !self.terminal {
            // lane traffic moves every other frame
            if self.frame % 2 == 1 {
                for lane in 0..LANES {
                    if let Some(x) = self.slots[lane].x() {
                        let nx = x as i32 + lane_dir(lane);
                        self.slots[lane] = if (0..SIZE as i32).contains(&nx) {
                            self.slots[lane].with_x(nx as u8)
                        } else {
                            SlotContent::Empty
                        };
                    }
                }
            }
            for lane in 0..LANES {
                if self.slots[lane] == SlotContent::Empty && self.rng.gen_range(0..SPAWN_ODDS) == 0
                {
                    let x = if lane_dir(lane) > 0 {
                        0
                    } else {
                        SIZE as u8 - 1
                    };
                    self.slots[lane] = if self.rng.gen_range(0..4) == 0 {
                        SlotContent::Diver { x }
                    } else {
                        SlotContent::Enemy { x }
                    };
                }
            }
            self.resolve_collisions();
        }
        self.frame += 1;

        let reward = (self.score - score_before) as f64;
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
