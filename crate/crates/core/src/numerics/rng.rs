//! Seeded random-number streams.
//!
//! Every random quantity in a simulation is drawn from an explicit
//! `(seed, stream_id)` pair backed by ChaCha8, with Gaussians produced by
//! Box-Muller under a fixed pairing convention. This is what makes "all
//! nodes draw the same matrix" and "re-run the experiment bit-identically"
//! well-defined across platforms.

use super::Matrix;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Identifier of the generator family; recorded so traces can state how
/// their randomness was produced.
pub const RNG_ALGORITHM_TAG: &str = "chacha8/box-muller-v1";

/// Descriptor of a reproducible random stream. Copyable and inert: call
/// [`RngStream::sampler`] to start drawing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Derive the `index`-th child stream. Children of distinct parents or
    /// distinct indices mix to distinct 64-bit stream ids.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index)),
        }
    }

    pub fn sampler(&self) -> GaussianSampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        GaussianSampler { rng, spare: None }
    }
}

/// Draws uniforms and Box-Muller Gaussians from one stream.
pub struct GaussianSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSampler {
    /// Uniform on (0, 1]; never returns 0, so `ln` below is safe.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal. Each Box-Muller pair is consumed cosine first,
    /// sine second.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform on [0, 1).
    pub fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}

/// `rows x cols` matrix of i.i.d. standard normal entries, filled in
/// row-major order from a fresh sampler on `stream`.
pub fn gaussian_matrix(rows: usize, cols: usize, stream: RngStream) -> Matrix {
    let mut sampler = stream.sampler();
    let data: Vec<f64> = (0..rows * cols).map(|_| sampler.next_gaussian()).collect();
    Matrix::from_vec(rows, cols, data)
}
