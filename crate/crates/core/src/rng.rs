//! Seeded random numbers.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `seed_from_u64`. Its output stream is fixed by the algorithm, so a seed
//! reproduces the same draws on every platform. Gaussian draws use
//! `rand_distr::StandardNormal`.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::normalize_in_place;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `stream` (one per attacked point,
    /// per restart, ...). Does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_vec<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| T::of(self.normal())).collect()
    }

    pub fn uniform_vec<T: Scalar>(&mut self, n: usize, lo: f64, hi: f64) -> Vec<T> {
        (0..n).map(|_| T::of(self.uniform_in(lo, hi))).collect()
    }

    /// Uniformly distributed direction on the unit sphere.
    pub fn unit_vector<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        loop {
            let mut v = self.normal_vec::<T>(n);
            if normalize_in_place(&mut v) > T::zero() {
                return v;
            }
        }
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forks_differ_from_parent_and_each_other() {
        let base = Rng::new(3);
        let mut f1 = base.fork(1);
        let mut f2 = base.fork(2);
        let mut again = base.fork(1);
        let x1 = f1.next_u64();
        assert_ne!(x1, f2.next_u64());
        assert_eq!(x1, again.next_u64());
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut r = Rng::new(1);
        for n in 1..8 {
            let v: Vec<f64> = r.unit_vector(n);
            let norm = crate::linalg::l2_norm(&v);
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
