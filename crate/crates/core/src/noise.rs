//! Counter-based Gaussian noise.
//!
//! Every increment is a pure function of `(seed, domain, path, stream, counter)`,
//! so paths can be generated in any order, on any number of threads, and a
//! coarse increment is always the exact sum of the fine increments it covers.
//! The mixing function is the SplitMix64 finalizer applied to a Weyl sequence.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine several identifiers into one 64-bit key.
pub fn hash_key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c909u64, |acc, &p| {
        mix64(acc ^ mix64(p.wrapping_add(GOLDEN_GAMMA)))
    })
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln() is safe.
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in (0, 1] at position `counter` of stream `key`.
#[inline]
pub fn uniform(key: u64, counter: u64) -> f64 {
    unit_open(mix64(
        key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
    ))
}

/// Standard normal at position `counter` of stream `key` (Box–Muller on
/// counter pairs; even counters take the cosine branch, odd the sine).
#[inline]
pub fn standard_normal(key: u64, counter: u64) -> f64 {
    let pair = counter >> 1;
    let u1 = uniform(key, 2 * pair);
    let u2 = uniform(key, 2 * pair + 1);
    let r = (-2.0 * u1.ln()).sqrt();
    if counter & 1 == 0 {
        r * (TAU * u2).cos()
    } else {
        r * (TAU * u2).sin()
    }
}

/// Fill `out` with normals at counters `start..start + out.len()`.
pub fn fill_standard_normal(key: u64, start: u64, out: &mut [f64]) {
    let mut i = 0;
    let mut c = start;
    if c & 1 == 1 && !out.is_empty() {
        out[0] = standard_normal(key, c);
        i = 1;
        c += 1;
    }
    while i + 1 < out.len() {
        let pair = c >> 1;
        let u1 = uniform(key, 2 * pair);
        let u2 = uniform(key, 2 * pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, co) = (TAU * u2).sin_cos();
        out[i] = r * co;
        out[i + 1] = r * s;
        i += 2;
        c += 2;
    }
    if i < out.len() {
        out[i] = standard_normal(key, c);
    }
}

/// Separates unrelated uses of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseDomain {
    /// Coupled system, averaged equation and auxiliary processes.
    Coupled,
    /// Frozen-equation chains (an independent probability space).
    Frozen,
    /// Sampling inside the hypothesis checker.
    Sampling,
}

impl NoiseDomain {
    fn id(self) -> u64 {
        match self {
            NoiseDomain::Coupled => 1,
            NoiseDomain::Frozen => 2,
            NoiseDomain::Sampling => 3,
        }
    }
}

/// Reproducible Brownian increments for `W¹ ∈ ℝ^{d1}` and `W² ∈ ℝ^{d2}`.
///
/// Fine increments live on grids of spacing `dt_w1` and `dt_w2`; asking for an
/// increment over `stride` fine steps returns their exact (left-to-right) sum.
/// The `W²` stream can be re-keyed with [`NoiseBundle::with_fast_stream`] so
/// that several fast realizations share one `W¹` path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    seed: u64,
    path_index: u64,
    dt_w1: f64,
    dt_w2: f64,
    d1: usize,
    d2: usize,
    key_w1: u64,
    key_w2: u64,
}

impl NoiseBundle {
    pub fn new(
        domain: NoiseDomain,
        seed: u64,
        path_index: u64,
        dt_w1: f64,
        dt_w2: f64,
        d1: usize,
        d2: usize,
    ) -> Self {
        assert!(
            dt_w1 > 0.0 && dt_w2 > 0.0,
            "noise base steps must be positive"
        );
        NoiseBundle {
            seed,
            path_index,
            dt_w1,
            dt_w2,
            d1,
            d2,
            key_w1: hash_key(&[seed, domain.id(), path_index, 1]),
            key_w2: hash_key(&[seed, domain.id(), path_index, 2, 0]),
        }
    }

    /// Noise for the coupled system, driven by one `W¹` per path.
    pub fn coupled(
        seed: u64,
        path_index: u64,
        dt_w1: f64,
        dt_w2: f64,
        d1: usize,
        d2: usize,
    ) -> Self {
        Self::new(NoiseDomain::Coupled, seed, path_index, dt_w1, dt_w2, d1, d2)
    }

    /// Noise for frozen-equation chain `chain` (only the `W²` part is used).
    pub fn frozen(seed: u64, chain: u64, dt: f64, d2: usize) -> Self {
        Self::new(NoiseDomain::Frozen, seed, chain, dt, dt, 1, d2)
    }

    /// Same `W¹`, fresh `W²` keyed by `tag`.
    pub fn with_fast_stream(&self, tag: u64) -> Self {
        let mut out = self.clone();
        out.key_w2 = hash_key(&[self.key_w2, tag.wrapping_add(1)]);
        out
    }

    /// Same `W¹`, fresh `W²`, different fine step for `W²`.
    pub fn with_fast_step(&self, dt_w2: f64) -> Self {
        assert!(dt_w2 > 0.0);
        let mut out = self.clone();
        out.dt_w2 = dt_w2;
        out
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn dt_w1(&self) -> f64 {
        self.dt_w1
    }

    pub fn dt_w2(&self) -> f64 {
        self.dt_w2
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Number of fine `W¹` steps in a step of size `h`, if `h` is a multiple.
    pub fn w1_stride(&self, h: f64) -> Option<u64> {
        integer_ratio(h, self.dt_w1)
    }

    pub fn w2_stride(&self, h: f64) -> Option<u64> {
        integer_ratio(h, self.dt_w2)
    }

    /// `W¹` increment over coarse step `step` of `stride` fine steps.
    pub fn w1_increment(&self, step: u64, stride: u64, out: &mut [f64]) {
        coarse_increment(self.key_w1, self.dt_w1, self.d1, step, stride, out);
    }

    /// `W²` increment over coarse step `step` of `stride` fine steps.
    pub fn w2_increment(&self, step: u64, stride: u64, out: &mut [f64]) {
        coarse_increment(self.key_w2, self.dt_w2, self.d2, step, stride, out);
    }

    /// Consecutive fine `W²` increments for steps `first..first + out.len()/d2`.
    pub fn w2_fine_block(&self, first: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len() % self.d2, 0);
        fill_standard_normal(self.key_w2, first * self.d2 as u64, out);
        let s = self.dt_w2.sqrt();
        out.iter_mut().for_each(|z| *z *= s);
    }
}

fn coarse_increment(key: u64, dt: f64, d: usize, step: u64, stride: u64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), d);
    let s = dt.sqrt();
    out.iter_mut().for_each(|v| *v = 0.0);
    let first = step * stride;
    for j in first..first + stride {
        for (c, v) in out.iter_mut().enumerate() {
            *v += s * standard_normal(key, j * d as u64 + c as u64);
        }
    }
}

/// `a / b` as an integer when `a` is a multiple of `b` to within rounding.
pub fn integer_ratio(a: f64, b: f64) -> Option<u64> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k.max(1.0) {
        Some(k as u64)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let key = hash_key(&[7, 1]);
        let n = 200_000u64;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for c in 0..n {
            let z = standard_normal(key, c);
            s1 += z;
            s2 += z * z;
            s4 += z.powi(4);
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let var = s2 / nf - mean * mean;
        // se(mean) = 1/sqrt(n); se(var) = sqrt(2/n)
        assert!(mean.abs() < 4.0 / nf.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "var {var}");
        assert!((s4 / nf - 3.0).abs() < 4.0 * (96.0 / nf).sqrt(), "kurtosis");
    }

    #[test]
    fn block_fill_matches_pointwise() {
        let key = hash_key(&[3]);
        for start in [0u64, 1, 6, 11] {
            let mut buf = vec![0.0; 9];
            fill_standard_normal(key, start, &mut buf);
            for (i, v) in buf.iter().enumerate() {
                assert_eq!(*v, standard_normal(key, start + i as u64));
            }
        }
    }

    #[test]
    fn coarse_is_sum_of_fine() {
        let nb = NoiseBundle::coupled(11, 4, 0.01, 0.001, 2, 1);
        let mut coarse = [0.0; 2];
        nb.w1_increment(3, 5, &mut coarse);
        let mut acc = [0.0; 2];
        let mut fine = [0.0; 2];
        for j in 15..20 {
            nb.w1_increment(j, 1, &mut fine);
            acc[0] += fine[0];
            acc[1] += fine[1];
        }
        assert_eq!(coarse, acc);
    }

    #[test]
    fn fast_stream_rekey_keeps_w1() {
        let nb = NoiseBundle::coupled(1, 2, 0.01, 0.001, 1, 1);
        let other = nb.with_fast_stream(5);
        let (mut a, mut b) = ([0.0], [0.0]);
        nb.w1_increment(9, 1, &mut a);
        other.w1_increment(9, 1, &mut b);
        assert_eq!(a, b);
        nb.w2_increment(9, 1, &mut a);
        other.w2_increment(9, 1, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn domains_are_independent_streams() {
        let a = NoiseBundle::new(NoiseDomain::Coupled, 1, 0, 0.1, 0.1, 1, 1);
        let b = NoiseBundle::new(NoiseDomain::Frozen, 1, 0, 0.1, 0.1, 1, 1);
        let (mut x, mut y) = ([0.0], [0.0]);
        a.w2_increment(0, 1, &mut x);
        b.w2_increment(0, 1, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn integer_ratio_detects_multiples() {
        assert_eq!(integer_ratio(1e-3, 1e-4), Some(10));
        assert_eq!(integer_ratio(0.0625, 0.0009765625), Some(64));
        assert_eq!(integer_ratio(1e-3, 3e-4), None);
        assert_eq!(integer_ratio(1e-4, 1e-3), None);
    }
}
