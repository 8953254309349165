//! Environments with an Atari-like observation: a 128-byte RAM plus a
//! grayscale screen.
//!
//! Bundled games keep object positions in RAM in fine position units
//! ([`UNITS_PER_CELL`] per screen cell), the way console games track sprite
//! positions in pixels while the agent sees a coarse screen.

mod breakout;
mod catch;
mod chain;
mod diver;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use breakout::MicroBreakout;
pub use catch::MicroCatch;
pub use chain::MicroChain;
pub use diver::{MicroDiver, SlotContent};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const RAM_SIZE: usize = 128;
pub const UNITS_PER_CELL: u8 = 12;

pub type Ram = [u8; RAM_SIZE];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Screen {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Screen {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn empty() -> Self {
        Self {
            height: 0,
            width: 0,
            pixels: Vec::new(),
        }
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, shade: u8) {
        if row < self.height && col < self.width {
            self.pixels[row * self.width + col] = shade;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub ram: Ram,
    /// Empty for RAM-only environments.
    pub screen: Screen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub observation: Observation,
    /// Score delta.
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    fn name(&self) -> &'static str;

    fn action_count(&self) -> usize;

    /// `(height, width)` of the screen, `None` for RAM-only environments.
    fn screen_shape(&self) -> Option<(usize, usize)>;

    /// Starts a fresh episode fully determined by `seed`.
    fn reset(&mut self, seed: u64) -> Observation;

    /// Advances exactly one frame.
    fn step(&mut self, action: usize) -> Result<EnvStepResult>;

    fn observation(&self) -> Observation;

    fn is_terminal(&self) -> bool;
}

pub(crate) fn check_step(action: usize, actions: usize, terminal: bool) -> Result<()> {
    if terminal {
        return Err(Error::EpisodeTerminated);
    }
    if action >= actions {
        return Err(Error::ActionOutOfRange { action, actions });
    }
    Ok(())
}

pub(crate) fn to_units(cell: usize) -> u8 {
    (cell as u8) * UNITS_PER_CELL
}

/// Repeats `action` for `k` frames or until the episode ends. The reward
/// is the sum over the frames played; the observation is the last frame's.
pub fn frame_skip_step<E: Environment + ?Sized>(
    env: &mut E,
    action: usize,
    k: usize,
) -> Result<EnvStepResult> {
    if k == 0 {
        return Err(Error::Config("frame skip must be at least 1".into()));
    }
    let mut reward = 0.0;
    let mut last = None;
    for _ in 0..k {
        let r = env.step(action)?;
        reward += r.reward;
        let done = r.terminal;
        last = Some(r);
        if done {
            break;
        }
    }
    let mut out = last.expect("k >= 1");
    out.reward = reward;
    Ok(out)
}

/// Each RAM byte divided by 256, so inputs lie in `[0, 255/256]`.
pub fn scale_ram<T: Scalar>(ram: &Ram) -> Tensor<T> {
    Tensor::vector(ram.iter().map(|&b| T::from_f64(b as f64 / 256.0)).collect())
}

/// The last `phi_length` screens, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiBuffer {
    phi_length: usize,
    frames: VecDeque<Vec<u8>>,
    height: usize,
    width: usize,
}

impl PhiBuffer {
    /// Buffer holding `phi_length` copies of `initial`.
    pub fn new(phi_length: usize, initial: &Screen) -> Self {
        assert!(phi_length > 0, "phi length must be positive");
        let frames = std::iter::repeat(initial.pixels.clone())
            .take(phi_length)
            .collect();
        Self {
            phi_length,
            frames,
            height: initial.height,
            width: initial.width,
        }
    }

    pub fn reset(&mut self, initial: &Screen) {
        *self = Self::new(self.phi_length, initial);
    }

    pub fn push(&mut self, screen: &Screen) {
        debug_assert_eq!((screen.height, screen.width), (self.height, self.width));
        self.frames.pop_front();
        self.frames.push_back(screen.pixels.clone());
    }

    pub fn phi_length(&self) -> usize {
        self.phi_length
    }

    /// Raw stacked bytes, `[phi_length, height, width]`.
    pub fn stacked_bytes(&self) -> Vec<u8> {
        self.frames.iter().flatten().copied().collect()
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u8]> {
        self.frames.iter().map(Vec::as_slice)
    }
}

/// Evicts the oldest frame, appends `screen`, and returns the stack scaled
/// to `[0, 1)` by 256.
pub fn phi_observe<T: Scalar>(buffer: &mut PhiBuffer, screen: &Screen) -> Tensor<T> {
    buffer.push(screen);
    let data = buffer
        .stacked_bytes()
        .iter()
        .map(|&b| T::from_f64(b as f64 / 256.0))
        .collect();
    Tensor::new(vec![buffer.phi_length, buffer.height, buffer.width], data)
        .expect("buffer frames have the declared extents")
}

/// Network-ready state: the last frame's RAM and, for screen networks, the
/// stacked screens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub ram: Ram,
    /// `[phi_length, height, width]` bytes, empty when screens are elided.
    pub screens: Vec<u8>,
}

impl StateSnapshot {
    pub fn ram_only(ram: Ram) -> Self {
        Self {
            ram,
            screens: Vec::new(),
        }
    }

    pub fn capture(ram: &Ram, phi: Option<&PhiBuffer>) -> Self {
        Self {
            ram: *ram,
            screens: phi.map(PhiBuffer::stacked_bytes).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    MicroCatch,
    MicroBreakout,
    MicroDiver,
    MicroChain,
}

impl EnvName {
    pub const ALL: [EnvName; 4] = [
        EnvName::MicroCatch,
        EnvName::MicroBreakout,
        EnvName::MicroDiver,
        EnvName::MicroChain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::MicroCatch => "micro_catch",
            EnvName::MicroBreakout => "micro_breakout",
            EnvName::MicroDiver => "micro_diver",
            EnvName::MicroChain => "micro_chain",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment `{s}`")))
    }
}

/// Any bundled environment, serializable for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnyEnv {
    Catch(MicroCatch),
    Breakout(MicroBreakout),
    Diver(MicroDiver),
    Chain(MicroChain),
}

impl AnyEnv {
    pub fn new(name: EnvName) -> Self {
        match name {
            EnvName::MicroCatch => AnyEnv::Catch(MicroCatch::new()),
            EnvName::MicroBreakout => AnyEnv::Breakout(MicroBreakout::new()),
            EnvName::MicroDiver => AnyEnv::Diver(MicroDiver::new()),
            EnvName::MicroChain => AnyEnv::Chain(MicroChain::new()),
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            AnyEnv::Catch(e) => e,
            AnyEnv::Breakout(e) => e,
            AnyEnv::Diver(e) => e,
            AnyEnv::Chain(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            AnyEnv::Catch(e) => e,
            AnyEnv::Breakout(e) => e,
            AnyEnv::Diver(e) => e,
            AnyEnv::Chain(e) => e,
        }
    }
}

impl Environment for AnyEnv {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn action_count(&self) -> usize {
        self.inner().action_count()
    }
    fn screen_shape(&self) -> Option<(usize, usize)> {
        self.inner().screen_shape()
    }
    fn reset(&mut self, seed: u64) -> Observation {
        self.inner_mut().reset(seed)
    }
    fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        self.inner_mut().step(action)
    }
    fn observation(&self) -> Observation {
        self.inner().observation()
    }
    fn is_terminal(&self) -> bool {
        self.inner().is_terminal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn play(name: EnvName, seed: u64, actions: &[usize]) -> Vec<(Ram, Vec<u8>, f64, bool)> {
        let mut env = AnyEnv::new(name);
        env.reset(seed);
        let mut out = Vec::new();
        for &a in actions {
            if env.is_terminal() {
                break;
            }
            let r = env.step(a).unwrap();
            out.push((
                r.observation.ram,
                r.observation.screen.pixels,
                r.reward,
                r.terminal,
            ));
        }
        out
    }

    #[test]
    fn ram_is_128_bytes_and_reset_deterministic() {
        for name in EnvName::ALL {
            let mut a = AnyEnv::new(name);
            let mut b = AnyEnv::new(name);
            let oa = a.reset(17);
            assert_eq!(oa.ram.len(), 128);
            assert_eq!(oa, b.reset(17), "{name}");
            if let Some((h, w)) = a.screen_shape() {
                assert_eq!(oa.screen.pixels.len(), h * w);
            }
        }
    }

    #[test]
    fn fixed_seed_and_actions_replay_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for name in EnvName::ALL {
            let n = AnyEnv::new(name).action_count();
            let actions: Vec<usize> = (0..400).map(|_| rng.gen_range(0..n)).collect();
            assert_eq!(play(name, 9, &actions), play(name, 9, &actions), "{name}");
        }
    }

    #[test]
    fn action_counts() {
        assert_eq!(AnyEnv::new(EnvName::MicroCatch).action_count(), 3);
        assert_eq!(AnyEnv::new(EnvName::MicroBreakout).action_count(), 4);
        assert_eq!(AnyEnv::new(EnvName::MicroDiver).action_count(), 6);
        assert_eq!(AnyEnv::new(EnvName::MicroChain).action_count(), 2);
    }

    #[test]
    fn illegal_action_and_terminated_episode() {
        let mut env = AnyEnv::new(EnvName::MicroCatch);
        env.reset(0);
        assert!(matches!(
            env.step(3),
            Err(Error::ActionOutOfRange {
                action: 3,
                actions: 3
            })
        ));
        while !env.is_terminal() {
            env.step(0).unwrap();
        }
        assert!(matches!(env.step(0), Err(Error::EpisodeTerminated)));
    }

    /// Environment replaying a scripted reward sequence.
    struct Scripted {
        rewards: Vec<f64>,
        terminal_at: Option<usize>,
        t: usize,
    }

    impl Environment for Scripted {
        fn name(&self) -> &'static str {
            "scripted"
        }
        fn action_count(&self) -> usize {
            1
        }
        fn screen_shape(&self) -> Option<(usize, usize)> {
            None
        }
        fn reset(&mut self, _: u64) -> Observation {
            self.t = 0;
            self.observation()
        }
        fn step(&mut self, action: usize) -> Result<EnvStepResult> {
            check_step(action, 1, self.is_terminal())?;
            let reward = self.rewards[self.t];
            self.t += 1;
            Ok(EnvStepResult {
                observation: self.observation(),
                reward,
                terminal: self.is_terminal(),
            })
        }
        fn observation(&self) -> Observation {
            let mut ram = [0; RAM_SIZE];
            ram[0] = self.t as u8;
            Observation {
                ram,
                screen: Screen::empty(),
            }
        }
        fn is_terminal(&self) -> bool {
            self.terminal_at == Some(self.t)
        }
    }

    #[test]
    fn frame_skip_sums_rewards() {
        let mut env = Scripted {
            rewards: vec![0.0, 1.0, 0.0, 2.0],
            terminal_at: None,
            t: 0,
        };
        let r = frame_skip_step(&mut env, 0, 4).unwrap();
        assert_eq!(r.reward, 3.0);
        assert_eq!(r.observation.ram[0], 4);
        assert!(!r.terminal);
    }

    #[test]
    fn frame_skip_stops_at_terminal() {
        let mut env = Scripted {
            rewards: vec![1.0, 1.0, 5.0, 5.0],
            terminal_at: Some(2),
            t: 0,
        };
        let r = frame_skip_step(&mut env, 0, 4).unwrap();
        assert!(r.terminal);
        assert_eq!(env.t, 2);
        assert_eq!(r.reward, 2.0);
    }

    #[test]
    fn frame_skip_one_equals_step() {
        let mut a = AnyEnv::new(EnvName::MicroDiver);
        a.reset(4);
        let mut b = a.clone();
        for action in [0, 1, 2, 3, 4, 5, 3, 3] {
            assert_eq!(
                frame_skip_step(&mut a, action, 1).unwrap(),
                b.step(action).unwrap()
            );
        }
        assert!(frame_skip_step(&mut a, 0, 0).is_err());
    }

    #[test]
    fn scale_ram_values() {
        let mut ram = [0u8; RAM_SIZE];
        ram[1] = 128;
        ram[2] = 255;
        let t: Tensor<f64> = scale_ram(&ram);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 0.5);
        assert_eq!(t.data()[2], 0.99609375);
    }

    #[test]
    fn phi_buffer_fifo_and_scaling() {
        let frame = |v: u8| Screen {
            height: 2,
            width: 2,
            pixels: vec![v; 4],
        };
        let mut buf = PhiBuffer::new(4, &frame(1));
        let same: Tensor<f64> = phi_observe(&mut buf, &frame(1));
        assert_eq!(same.shape(), &[4, 2, 2]);
        assert!(same.data().iter().all(|&v| v == 1.0 / 256.0));

        let mut buf = PhiBuffer::new(4, &frame(0));
        let mut last: Tensor<f64> = Tensor::zeros(&[1]);
        for v in 1..=5 {
            last = phi_observe(&mut buf, &frame(v));
        }
        let planes: Vec<f64> = last.data().chunks(4).map(|p| p[0] * 256.0).collect();
        assert_eq!(planes, vec![2.0, 3.0, 4.0, 5.0]);

        let top: Tensor<f64> = phi_observe(&mut buf, &frame(255));
        assert_eq!(top.data()[15], 255.0 / 256.0);
    }

    #[test]
    fn env_names_round_trip() {
        for name in EnvName::ALL {
            assert_eq!(name.as_str().parse::<EnvName>().unwrap(), name);
        }
        assert!("pong".parse::<EnvName>().is_err());
    }
}
