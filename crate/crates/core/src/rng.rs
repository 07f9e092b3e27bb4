//! Seeded, splittable random streams.
//!
//! Every random decision in a run is drawn from a stream keyed by
//! `(seed, domain, index...)`. Streams never share state, so per-prompt work
//! can be reordered or parallelised without changing results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct constants keep streams for different purposes
/// independent even when their indices coincide.
pub mod domain {
    pub const CONTEXT: u64 = 0x01;
    pub const GENERATOR: u64 = 0x02;
    pub const CANDIDATES: u64 = 0x03;
    pub const FEATURE_MAP: u64 = 0x04;
    pub const PROMPT_ORDER: u64 = 0x10;
    pub const SELECTION: u64 = 0x11;
    pub const JUDGE: u64 = 0x12;
    pub const TIE_BREAK: u64 = 0x13;
    pub const ENN_INIT: u64 = 0x20;
    pub const ENN_TRAIN: u64 = 0x21;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator for `(seed, domain, path)`.
pub fn stream(seed: u64, domain: u64, path: &[u64]) -> ChaCha8Rng {
    let mut key = splitmix64(seed ^ splitmix64(domain));
    for &p in path {
        key = splitmix64(key ^ splitmix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// Source of the primitive draws the selection methods consume.
///
/// Implemented for every [`RngCore`], and by [`RecordedDraws`] so that tests
/// can replay a fixed tape of uniforms through a method.
pub trait Draws {
    /// Uniform in `[0, 1)`.
    fn uniform(&mut self) -> f64;

    /// Uniform index in `0..n`. `n` must be positive.
    fn index(&mut self, n: usize) -> usize;
}

impl<R: RngCore + ?Sized> Draws for R {
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.random_range(0..n)
    }
}

/// A fixed tape of uniforms. Indices are derived as `floor(u * n)`.
#[derive(Debug, Clone)]
pub struct RecordedDraws {
    tape: Vec<f64>,
    pos: usize,
}

impl RecordedDraws {
    pub fn new(tape: Vec<f64>) -> Self {
        Self { tape, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    fn next(&mut self) -> f64 {
        let u = *self
            .tape
            .get(self.pos)
            .expect("recorded draw tape exhausted");
        self.pos += 1;
        u
    }
}

impl Draws for RecordedDraws {
    fn uniform(&mut self) -> f64 {
        self.next()
    }

    fn index(&mut self, n: usize) -> usize {
        ((self.next() * n as f64) as usize).min(n - 1)
    }
}
