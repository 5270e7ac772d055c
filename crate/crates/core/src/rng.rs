//! Counter-based pseudo-random streams.
//!
//! Every random quantity in this crate is drawn from a [`Stream`] identified by
//! `(seed, domain, index)`. The stream key is
//!
//! ```text
//! key = mix64(mix64(seed ^ mix64(domain + G)) ^ mix64(index + 2G))
//! ```
//!
//! and the k-th 64-bit output (k = 0, 1, ...) is `mix64(key + (k + 1) * G)`,
//! where `G = 0x9E3779B97F4A7C15` and `mix64` is the SplitMix64 finalizer
//! (Stafford variant 13). All arithmetic wraps modulo 2^64. Outputs are a pure
//! function of `(seed, domain, index, k)`, so per-sample streams can be drawn
//! in any order or on any number of threads with identical results.
//!
//! Derived variates:
//! - uniform on (0, 1): `((x >> 11) + 0.5) * 2^-53`;
//! - standard normal: Box–Muller cosine branch from two consecutive uniforms;
//! - gamma (shape ≥ 1): Marsaglia–Tsang squeeze with the draws above;
//! - Student-t(ν): `N / sqrt(2 * Gamma(ν/2) / ν)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Domain tags keep unrelated uses of one seed from sharing streams.
pub mod domain {
    pub const SCENARIO: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const TOY_WEIGHTS: u64 = 3;
    pub const TOY_TRAIN: u64 = 4;
    pub const TOY_TEST: u64 = 5;
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, domain: u64, index: u64) -> Self {
        let d = mix64(domain.wrapping_add(GOLDEN));
        let i = mix64(index.wrapping_add(GOLDEN.wrapping_mul(2)));
        Self {
            key: mix64(mix64(seed ^ d) ^ i),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased integer in `0..n` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = self.next_u64() as u128 * n as u128;
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gamma(shape, 1) for shape ≥ 1.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape >= 1.0, "gamma sampler requires shape >= 1");
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Student-t with `nu` degrees of freedom, `nu` ≥ 2.
    pub fn student_t(&mut self, nu: f64) -> f64 {
        let z = self.normal();
        let chi2 = 2.0 * self.gamma(nu / 2.0);
        z / (chi2 / nu).sqrt()
    }
}
