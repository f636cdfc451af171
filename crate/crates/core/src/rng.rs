//! Counter-based random streams.
//!
//! Every unit of work inside a sweep (one equation, one volatility series, one
//! time point) gets its own ChaCha stream keyed by `(seed, sweep, block,
//! unit)`. Draws therefore do not depend on how work is scheduled across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// Sampler blocks that consume randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Block {
    Coefficients = 1,
    IdioVol = 2,
    Factors = 3,
    Loadings = 4,
    FactorVol = 5,
    LocalScales = 6,
    GlobalScales = 7,
    Init = 8,
    Simulate = 9,
    FactorScale = 10,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream factory for a single sweep.
#[derive(Clone, Debug)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64, sweep: u64) -> Self {
        let mut state = seed ^ sweep.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
        }
        Streams { key }
    }

    pub fn rng(&self, block: Block, unit: usize) -> ChainRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(((block as u64) << 40) | unit as u64);
        rng
    }
}

/// A single stream for sequential code (tests, simulation).
pub fn seeded(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}
