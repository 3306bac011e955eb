//! Deterministic pseudo-random streams.
//!
//! Every stochastic step in the toolkit (weight init, shuffling, pair sampling,
//! corpus synthesis, splitting) draws from [`XorShift64Star`], so results are
//! reproducible bit for bit across platforms.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;

/// One round of SplitMix64 (Steele, Lea & Flood): used only to scramble seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* generator: state update `x ^= x >> 12; x ^= x << 25; x ^= x >> 27`,
/// output `x * 0x2545F4914F6CDD1D`.
///
/// The seed is passed through [`splitmix64`] so every `u64` seed, zero
/// included, yields a nonzero state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = SPLITMIX_GAMMA;
        }
        Self { state }
    }

    /// Independent stream keyed by `seed` and a sequence of tags
    /// (e.g. a purpose constant and an epoch number).
    pub fn stream(seed: u64, tags: &[u64]) -> Self {
        let mut h = splitmix64(seed);
        for &t in tags {
            h = splitmix64(h ^ splitmix64(t.wrapping_mul(SPLITMIX_GAMMA)));
        }
        Self::new(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULTIPLIER)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let r = self.next_u64();
            if r < zone {
                return (r % n) as usize;
            }
        }
    }

    /// Standard normal deviate (Box-Muller, one of the pair is discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
