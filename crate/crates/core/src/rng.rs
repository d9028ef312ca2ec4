//! Seed derivation and per-agent random streams.
//!
//! Every random number in a run descends from one master seed. Sub-streams
//! are addressed by a name and a sequence of indices; the derivation feeds
//! them through ChaCha8 so the mapping is identical on every platform.
//! Within an episode each agent owns its own ChaCha8 stream, so an agent's
//! coin flips do not depend on who else is in the queue. That keeps paired
//! (common random number) comparisons aligned when one agent's strategy is
//! swapped.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform draws consumed by one agent in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    /// Compared against the ignorance probability.
    pub forget_u: f64,
    /// Inverse-CDF input for the declared distribution.
    pub action_u: f64,
}

impl Draw {
    /// A draw that never forgets (for `p < 1`) and picks the lowest action
    /// with positive mass.
    pub const REMEMBER: Draw = Draw {
        forget_u: 1.0,
        action_u: 0.0,
    };
    /// A draw that forgets whenever `p > 0`.
    pub const FORGET: Draw = Draw {
        forget_u: 0.0,
        action_u: 0.0,
    };
}

/// Source of per-agent draws for a round.
pub trait DrawSource {
    fn draw(&mut self, agent_id: u64, round: u32) -> Draw;
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A named sub-seed of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedKey([u8; 32]);

impl SeedKey {
    pub fn master(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        SeedKey(key)
    }

    /// Derives a child key from a label and an index.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(fnv1a(label) ^ index.rotate_left(32));
        rng.set_word_pos((index as u128) << 4);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        SeedKey(key)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.0)
    }

    pub fn rng_stream(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.0);
        r.set_stream(stream);
        r
    }
}

/// One ChaCha8 stream per agent, created lazily on first use.
pub struct AgentStreams {
    key: SeedKey,
    streams: Vec<Option<ChaCha8Rng>>,
}

impl AgentStreams {
    pub fn new(key: SeedKey) -> Self {
        AgentStreams {
            key,
            streams: Vec::new(),
        }
    }

    /// Frees the stream of an agent that has left the game.
    pub fn retire(&mut self, agent_id: u64) {
        if let Some(slot) = self.streams.get_mut(agent_id as usize) {
            *slot = None;
        }
    }
}

impl DrawSource for AgentStreams {
    fn draw(&mut self, agent_id: u64, _round: u32) -> Draw {
        let idx = agent_id as usize;
        if idx >= self.streams.len() {
            self.streams.resize_with(idx + 1, || None);
        }
        let key = self.key;
        let rng = self.streams[idx].get_or_insert_with(|| key.rng_stream(agent_id));
        Draw {
            forget_u: rng.random::<f64>(),
            action_u: rng.random::<f64>(),
        }
    }
}

/// Draws from a single shared generator, agent after agent.
pub struct SharedStream<R>(pub R);

impl<R: RngCore> DrawSource for SharedStream<R> {
    fn draw(&mut self, _agent_id: u64, _round: u32) -> Draw {
        Draw {
            forget_u: self.0.random::<f64>(),
            action_u: self.0.random::<f64>(),
        }
    }
}
