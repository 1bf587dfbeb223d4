//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so enabling one feature (say, truncation draws) never shifts
//! the numbers seen by another.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

pub type StreamRng = ChaCha8Rng;

/// Independent stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Noise = 2,
    Times = 3,
    Truncation = 4,
    Eval = 5,
    Prior = 6,
    Projection = 7,
    Misc = 8,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// `n x d` standard normal draws.
pub fn normal_batch<T: Scalar>(rng: &mut impl Rng, n: usize, d: usize) -> Array2<T> {
    Array2::from_shape_simple_fn((n, d), || {
        let z: f64 = rng.sample(StandardNormal);
        T::of(z)
    })
}

/// `n` draws uniform on the open interval `(lo, hi)`.
pub fn uniform_times(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    debug_assert!(lo < hi);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let t = lo + (hi - lo) * u;
            if t <= lo {
                lo + (hi - lo) * 0.5 * f64::EPSILON
            } else {
                t
            }
        })
        .collect()
}
