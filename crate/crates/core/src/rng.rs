//! Seeded PCG32 (XSH-RR, 64-bit state) with portable derived distributions.
//!
//! The generator is `rand_pcg::Pcg32`, which is seeded the same way as the PCG
//! reference implementation. Everything built on top of the raw `u32` stream is
//! spelled out here so another implementation can reproduce it:
//!
//! * `next_f64`: two draws `hi`, `lo`; `((hi << 32 | lo) >> 11) * 2^-53`, in `[0, 1)`.
//! * `below(bound)`: the reference `pcg32_boundedrand` rejection scheme.
//! * `normal`: Box–Muller cosine branch, `u1 = 1 - next_f64()`, `u2 = next_f64()`.
//! * `shuffle`: Fisher–Yates from the back, `j = below(i + 1)`.

use rand_core::Rng as _;
use rand_pcg::Pcg32;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Pcg32,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Rng {
            inner: Pcg32::new(seed, stream),
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo < hi);
        let x = lo + (hi - lo) * self.next_f64();
        // lo + (hi-lo)*u can round up to hi
        if x < hi {
            x
        } else {
            lo
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "below(0)");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    pub fn below_usize(&mut self, bound: usize) -> usize {
        assert!(bound <= u32::MAX as usize, "bound {bound} exceeds u32");
        self.below(bound as u32) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_usize(i + 1);
            items.swap(i, j);
        }
    }

    /// A shuffled `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    /// `k` distinct indices from `0..n` (partial Fisher–Yates from the front).
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below_usize(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    /// An independent generator derived from this one's stream.
    pub fn fork(&mut self, stream: u64) -> Rng {
        Rng::new(self.next_u64(), stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_pcg32_reference_vector() {
        // pcg32-demo output for pcg32_srandom(42, 54)
        let expected = [
            0xa15c02b7u32,
            0x7b47f409,
            0xba1d3330,
            0x83d2f293,
            0xbfa4784b,
            0xcbed606e,
        ];
        let mut rng = Rng::new(42, 54);
        for e in expected {
            assert_eq!(rng.next_u32(), e);
        }
    }

    #[test]
    fn same_seed_same_shuffle() {
        let a = Rng::new(7, 1).permutation(10);
        let b = Rng::new(7, 1).permutation(10);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = Rng::new(11, 0);
        for _ in 0..10_000 {
            let x = rng.uniform(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&x));
        }
    }

    #[test]
    fn normal_mean_is_near_zero() {
        let mut rng = Rng::new(12, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| rng.normal()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn normal_variance_is_near_one() {
        let mut rng = Rng::new(13, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sample_distinct_has_no_repeats() {
        let mut rng = Rng::new(14, 0);
        let mut s = rng.sample_distinct(50, 20);
        assert_eq!(s.len(), 20);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|&i| i < 50));
    }

    #[test]
    fn below_is_unbiased_enough() {
        let mut rng = Rng::new(15, 0);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[rng.below(3) as usize] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }
}
