//! Seeded random number generation shared by initialisers, dropout and the
//! dataset generators.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

/// Deterministic generator. The stream depends only on the seed.
#[derive(Clone, Debug)]
pub struct Rng64 {
    inner: ChaCha8Rng,
}

impl Rng64 {
    pub fn seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent child stream, e.g. one per layer or per pass.
    pub fn fork(&mut self, salt: u64) -> Self {
        let s = self.inner.next_u64() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self::seed(s)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bit(&mut self) -> u8 {
        u8::from(self.inner.random::<bool>())
    }

    /// Normal(0, sigma²) truncated to `[-2 sigma, 2 sigma]` by resampling.
    pub fn truncated_normal(&mut self, sigma: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * sigma;
            }
        }
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| lo + (hi - lo) * self.uniform())
    }

    pub fn truncated_normal_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.truncated_normal(sigma))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
