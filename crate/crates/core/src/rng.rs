//! Independent, seed-derived random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(replicate seed, purpose, index)`. Streams never share state, so the
//! order in which they are drawn from cannot change any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Partition = 1,
    Trainer = 2,
    Selection = 3,
    Channel = 4,
    Federated = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((purpose as u64) << 40) | (index & 0xff_ffff_ffff));
        rng
    }

    pub fn device_channels(&self, devices: usize) -> Vec<ChaCha8Rng> {
        (0..devices as u64)
            .map(|k| self.stream(Purpose::Channel, k))
            .collect()
    }
}
