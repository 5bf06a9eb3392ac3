//! Deterministic, named random streams.
//!
//! All randomness in the verification harness (trial fields, random weights,
//! random metrics) flows from a single master seed through named substreams,
//! so that every check is reproducible bit-for-bit from its configuration.

use crate::grid::{Grid, GridField};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits one master seed into independent named streams.
#[derive(Clone, Copy, Debug)]
pub struct SeedSplitter {
    master: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// Deterministic generator for the given stream name.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut state = self.master ^ fnv1a64(name.as_bytes());
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Random band-limited periodic field: a trigonometric polynomial with modes
/// up to `max_mode` in each direction and amplitude scaled so the result's
/// sup norm is close to `amplitude`.
///
/// Band-limitation matters: the spectral operators differentiate these fields
/// exactly, so identity checks on random inputs are limited by rounding, not
/// by unresolved frequency content.
pub fn random_trig_field(
    rng: &mut ChaCha8Rng,
    grid: Grid,
    max_mode: usize,
    amplitude: f64,
) -> GridField {
    let m = max_mode as i64;
    let mut terms: Vec<(f64, f64, f64, f64)> = Vec::new();
    // Half-plane of mode pairs so each real mode appears once.
    for mx in 0..=m {
        let my_lo = if mx == 0 { 1 } else { -m };
        for my in my_lo..=m {
            let coef: f64 = rng.random_range(-1.0..1.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            terms.push((mx as f64, my as f64, coef, phase));
        }
    }
    let norm: f64 = terms.iter().map(|t| t.2.abs()).sum::<f64>().max(1e-12);
    let mut field = GridField::from_fn(grid, |x, y| {
        let mut v = 0.0;
        for &(mx, my, coef, phase) in &terms {
            v += coef
                * (std::f64::consts::TAU * (mx * x / grid.lx + my * y / grid.ly) + phase).cos();
        }
        v
    });
    let scale = amplitude / norm;
    for v in &mut field.data {
        *v *= scale;
    }
    field
}
