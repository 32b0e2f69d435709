//! Deterministic derivation of independent random streams.
//!
//! Parallel phases of the sampler draw from a stream keyed by
//! `(seed, phase, sweep, index)`, so results do not depend on thread count or
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phase tags keep streams for different sampler steps apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    Minibatch = 2,
    Assignment = 3,
    Weights = 4,
    Component = 5,
    Eval = 6,
    Synth = 7,
    Split = 8,
}

pub fn stream(seed: u64, phase: Phase, sweep: u64, index: u64) -> StreamRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let mixed = [
        splitmix64(&mut state),
        splitmix64(&mut state) ^ (phase as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93),
        splitmix64(&mut state) ^ sweep.wrapping_mul(0xA076_1D64_78BD_642F),
        splitmix64(&mut state) ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB),
    ];
    let mut acc = 0u64;
    for (chunk, word) in key.chunks_exact_mut(8).zip(mixed) {
        acc ^= word;
        let mut s = acc;
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
