//! Portable seeded generator.
//!
//! SplitMix64 (Steele, Lea, Flood 2014): the state advances by the golden-ratio
//! increment `0x9E3779B97F4A7C15` and each output is the state passed through
//! the variant-13 finalizer. Floats take the top 24 bits of an output, so a
//! given seed yields the same `f32` stream on every platform.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Child generator for an independent named stream.
    pub fn fork(&mut self, stream: u64) -> Self {
        Self::new(self.next_u64() ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn next_unit_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform_symmetric(&mut self, bound: f32) -> f32 {
        (2.0 * self.next_unit_f32() - 1.0) * bound
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller (one value per call, the pair's sine
    /// half is discarded to keep the stream position simple).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_unit_f64();
        let u2 = self.next_unit_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_outputs() {
        // First outputs for seed 0 from the reference C implementation.
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(g.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn unit_floats_in_range() {
        let mut g = SplitMix64::new(42);
        for _ in 0..10_000 {
            let x = g.next_unit_f32();
            assert!((0.0..1.0).contains(&x));
            let y = g.uniform_symmetric(0.5);
            assert!((-0.5..0.5).contains(&y));
            assert!(g.below(7) < 7);
        }
    }
}
