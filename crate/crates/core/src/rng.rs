//! Deterministic RNG streams.
//!
//! Every random decision in training and evaluation draws from a ChaCha8
//! stream keyed by `(master seed, purpose)` with the 64-bit ChaCha stream id
//! set to `(epoch << 32) | user`. Work for different users can therefore run
//! on any thread, in any order, and still see the same random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Split = 1,
    Init = 2,
    Shuffle = 3,
    Sample = 4,
    Probe = 5,
    Bound = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for one `(purpose, epoch, user)` cell under `seed`.
pub fn stream(seed: u64, purpose: Purpose, epoch: u32, user: u32) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(purpose as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(((epoch as u64) << 32) | user as u64);
    rng
}

/// Stream not tied to a particular user.
pub fn global(seed: u64, purpose: Purpose, epoch: u32) -> ChaCha8Rng {
    stream(seed, purpose, epoch, u32::MAX)
}
