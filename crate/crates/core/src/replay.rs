//! Bounded experience store with uniform minibatch sampling.

use rand::Rng;

use crate::envs::StateSnapshot;
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateSnapshot,
    pub action: usize,
    /// Sum of the rewards over the skipped frames.
    pub reward: f64,
    /// Never read for bootstrapping when `terminal` is set.
    pub next_state: StateSnapshot,
    pub terminal: bool,
}

/// Ring buffer of the most recent `capacity` transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    ring: Vec<Transition>,
    /// Slot the next push overwrites once the ring is full.
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            ring: Vec::with_capacity(capacity.min(4096)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Appends `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.ring.len() < self.capacity {
            self.ring.push(t);
        } else {
            self.ring[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.ring.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `n` independent uniform draws with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if self.ring.len() < n || self.ring.is_empty() {
            return Err(Error::InsufficientContents {
                requested: n,
                available: self.ring.len(),
            });
        }
        Ok((0..n)
            .map(|_| &self.ring[rng.gen_range(0..self.ring.len())])
            .collect())
    }

    /// Storage order and overwrite cursor, for exact serialization.
    pub(crate) fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.ring, self.cursor)
    }

    pub(crate) fn from_raw_parts(
        capacity: usize,
        ring: Vec<Transition>,
        cursor: usize,
    ) -> Result<Self> {
        let consistent = capacity > 0
            && ring.len() <= capacity
            && (cursor == 0 || (ring.len() == capacity && cursor < capacity));
        if !consistent {
            return Err(Error::CorruptCheckpoint(format!(
                "replay ring of {} items, capacity {capacity}, cursor {cursor}",
                ring.len()
            )));
        }
        Ok(Self {
            capacity,
            ring,
            cursor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: usize) -> Transition {
        let mut ram = [0u8; 128];
        ram[0] = (tag % 256) as u8;
        ram[1] = (tag / 256 % 256) as u8;
        ram[2] = (tag / 65536) as u8;
        let s = StateSnapshot::ram_only(ram);
        Transition {
            state: s.clone(),
            action: tag % 3,
            reward: tag as f64,
            next_state: s,
            terminal: false,
        }
    }

    fn tags(m: &ReplayMemory) -> Vec<usize> {
        m.iter().map(|t| t.reward as usize).collect()
    }

    #[test]
    fn push_to_empty() {
        let mut m = ReplayMemory::new(4);
        m.push(tr(1));
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn fifo_eviction() {
        let mut m = ReplayMemory::new(2);
        for i in 0..3 {
            m.push(tr(i));
        }
        assert_eq!(tags(&m), vec![1, 2]);
    }

    #[test]
    fn default_capacity_bound() {
        let mut m = ReplayMemory::new(DEFAULT_CAPACITY);
        for i in 0..100_001 {
            m.push(tr(i));
        }
        assert_eq!(m.len(), 100_000);
        assert_eq!(m.iter().next().unwrap().reward, 1.0);
        assert_eq!(m.iter().last().unwrap().reward, 100_000.0);
    }

    #[test]
    fn sample_single() {
        let mut m = ReplayMemory::new(4);
        m.push(tr(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = m.sample_minibatch(1, &mut rng).unwrap();
        assert_eq!(b[0], &tr(7));
    }

    #[test]
    fn sample_more_than_held_fails() {
        let mut m = ReplayMemory::new(100);
        for i in 0..31 {
            m.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.sample_minibatch(32, &mut rng),
            Err(Error::InsufficientContents {
                requested: 32,
                available: 31
            })
        ));
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut m = ReplayMemory::new(10);
        for i in 0..10 {
            m.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws / 10 {
            for t in m.sample_minibatch(10, &mut rng).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 9 degrees of freedom, significance 0.001
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn holds_last_k_in_order(capacity in 1usize..20, pushes in 0usize..60) {
            let mut m = ReplayMemory::new(capacity);
            for i in 0..pushes {
                m.push(tr(i));
            }
            let start = pushes.saturating_sub(capacity);
            prop_assert_eq!(tags(&m), (start..pushes).collect::<Vec<_>>());
            prop_assert!(m.len() <= capacity);
        }

        #[test]
        fn sampling_does_not_mutate(seed in any::<u64>()) {
            let mut m = ReplayMemory::new(5);
            for i in 0..8 {
                m.push(tr(i));
            }
            let before = tags(&m);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let _ = m.sample_minibatch(5, &mut rng).unwrap();
            prop_assert_eq!(tags(&m), before);
        }
    }
}
