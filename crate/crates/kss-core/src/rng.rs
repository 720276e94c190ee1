//! Counter-based random streams.
//!
//! Every coefficient of a sampled system is a function of
//! `(seed, equation, monomial rank)`: equation `l` reads ChaCha8 stream `l`
//! keyed by `seed`, and the normal for rank `k` is built by Box-Muller from
//! the two 64-bit words at word position `4k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for one equation of one system.
pub fn equation_stream(seed: u64, equation: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(equation);
    rng
}

fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Next standard normal of a stream. Consumes exactly four 32-bit words.
pub fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    box_muller(a, b)
}

/// Random access to the normal drawn for `(seed, equation, rank)`.
pub fn keyed_normal(seed: u64, equation: u64, rank: u64) -> f64 {
    let mut rng = equation_stream(seed, equation);
    rng.set_word_pos(4 * rank as u128);
    next_normal(&mut rng)
}

/// SplitMix64 finalizer, used to derive per-replicate seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r` in a campaign with base seed `base`.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    mix64(base ^ mix64(r.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// General-purpose generator for auxiliary Monte Carlo work.
pub fn aux_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0xA5A5_5A5A_F00D_BEEF));
    rng.set_stream(purpose);
    rng
}
