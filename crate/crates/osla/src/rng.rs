//! Seeded random streams and the Gaussian sampling used to build
//! measurement matrices, signals and noise.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit seed. Identical seeds
//! and draw orders produce bit-identical sequences on the same build, which
//! is what every determinism test in the crate leans on. Streams are
//! single-owner; parallel trials fork independent streams via [`RngStream::derive`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{DenseVector, MeasurementMatrix};

/// A seeded, counted random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of scalar draws emitted so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Forks an independent stream keyed by this stream's seed and a salt.
    /// Derivation does not consume draws from the parent.
    pub fn derive(&self, salt: u64) -> RngStream {
        RngStream::new(mix64(self.seed ^ mix64(salt)))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.gen::<f64>()
    }

    /// Uniform integer in [0, bound).
    pub fn below(&mut self, bound: usize) -> usize {
        self.counter += 1;
        self.rng.gen_range(0..bound)
    }

    /// Samples `k` distinct indices from [0, n), returned sorted ascending.
    pub fn sample_support(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::InvalidArgument(format!("cannot sample {k} of {n} indices")));
        }
        // Floyd's algorithm: deterministic draw count (k draws).
        let mut chosen = Vec::with_capacity(k);
        for j in n - k..n {
            let t = self.below(j + 1);
            if chosen.contains(&t) {
                chosen.push(j);
            } else {
                chosen.push(t);
            }
        }
        chosen.sort_unstable();
        Ok(chosen)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples an `m x n` matrix with i.i.d. zero-mean Gaussian entries of the
/// given standard deviation. Entries are drawn row-major.
pub fn sample_gaussian_matrix(
    m: usize,
    n: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<MeasurementMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("matrix dims must be positive, got {m}x{n}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let entries: Vec<f64> = (0..m * n).map(|_| scale * rng.standard_normal()).collect();
    MeasurementMatrix::new(m, n, entries)
}

/// Samples an m-vector of i.i.d. standard normal entries.
pub fn sample_standard_normal_vector(m: usize, rng: &mut RngStream) -> Result<DenseVector> {
    if m == 0 {
        return Err(Error::InvalidArgument("vector dim must be positive".into()));
    }
    DenseVector::new((0..m).map(|_| rng.standard_normal()).collect())
}
