use crate::numkit::portable::{portable_ln, portable_sin_cos_turn};

/// Deterministic SplitMix64 generator.
///
/// The state transition and output scramble are fixed, and the Gaussian path
/// uses the crate's portable transcendentals, so a given seed yields the
/// same stream bit for bit on every platform. Gaussian variates come from
/// Box-Muller with both outputs consumed in order (the sine branch is cached
/// and returned by the next call).
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    cached_gaussian: Option<f64>,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a child stream: one SplitMix64 step of `parent_seed ^ stream_index`.
pub fn derive_seed(parent_seed: u64, stream_index: u64) -> u64 {
    mix((parent_seed ^ stream_index).wrapping_add(GOLDEN_GAMMA))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            cached_gaussian: None,
        }
    }

    /// Child generator for an independent parallel stream.
    pub fn child(&self, stream_index: u64) -> Rng {
        Rng::new(derive_seed(self.state, stream_index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) by rejection; bound must be non-zero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Standard normal variate via Box-Muller on SplitMix64 output.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * portable_ln(u1)).sqrt();
        let (sin, cos) = portable_sin_cos_turn(u2);
        self.cached_gaussian = Some(r * sin);
        r * cos
    }

    /// Fills a buffer with standard normal variates cast to `f32`.
    pub fn fill_gaussian_f32(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.next_gaussian() as f32;
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
