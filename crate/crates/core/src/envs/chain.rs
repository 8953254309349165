use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_step, EnvStepResult, Environment, Observation, Ram, Screen, RAM_SIZE};
use crate::error::Result;

pub const CHAIN_STATES: usize = 5;
const LEFT: usize = 0;
const RIGHT: usize = 1;

/// Five-state chain with a RAM-only, one-hot observation.
///
/// `left` moves one state down (staying at 0), `right` moves one state up;
/// `right` from the last state pays 1 and ends the episode. RAM byte `s` is
/// 255 while in state `s`, every other byte is zero. No screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroChain {
    state: usize,
    terminal: bool,
}

impl Default for MicroChain {
    fn default() -> Self {
        Self::new()
    }
}

impl MicroChain {
    pub fn new() -> Self {
        Self {
            state: 0,
            terminal: false,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Deterministic dynamics: `(next_state, reward, terminal)`.
    pub fn transition(state: usize, action: usize) -> (usize, f64, bool) {
        match action {
            LEFT => (state.saturating_sub(1), 0.0, false),
            RIGHT if state + 1 == CHAIN_STATES => (state, 1.0, true),
            RIGHT => (state + 1, 0.0, false),
            _ => unreachable!("checked by caller"),
        }
    }

    pub fn ram_for(state: usize) -> Ram {
        let mut ram = [0u8; RAM_SIZE];
        ram[state] = 255;
        ram
    }
}

impl Environment for MicroChain {
    fn name(&self) -> &'static str {
        "micro_chain"
    }

    fn action_count(&self) -> usize {
        2
    }

    fn screen_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.state = ChaCha8Rng::seed_from_u64(seed).gen_range(0..CHAIN_STATES);
        self.terminal = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        check_step(action, 2, self.terminal)?;
        let (next, reward, terminal) = Self::transition(self.state, action);
        self.state = next;
        self.terminal = terminal;
        Ok(EnvStepResult {
            observation: self.observation(),
            reward,
            terminal,
        })
    }

    fn observation(&self) -> Observation {
        Observation {
            ram: Self::ram_for(self.state),
            screen: Screen::empty(),
        }
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_from_last_state_pays_and_ends() {
        let mut env = MicroChain::new();
        env.state = CHAIN_STATES - 1;
        let r = env.step(RIGHT).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.terminal);
    }

    #[test]
    fn one_hot_ram() {
        for s in 0..CHAIN_STATES {
            let ram = MicroChain::ram_for(s);
            assert_eq!(ram.iter().filter(|&&b| b != 0).count(), 1);
            assert_eq!(ram[s], 255);
        }
    }
}
