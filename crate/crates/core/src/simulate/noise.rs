//! Seeded, counter-based random streams.
//!
//! Stream definition (portable to any language with IEEE doubles):
//!
//! 1. `key = splitmix64(seed ^ (stream_id · 0xD1B54A32D192ED03))`
//! 2. the i-th raw word (i = 0, 1, …) is
//!    `splitmix64(key + (i + 1) · 0x9E3779B97F4A7C15)` with wrapping arithmetic
//! 3. a uniform on (0, 1) is `((word >> 11) + 0.5) · 2⁻⁵³`
//! 4. normals are produced in pairs by Box–Muller from two consecutive
//!    uniforms `u₁, u₂`: `r = √(−2 ln u₁)`, emitting `r·cos(2πu₂)` then
//!    `r·sin(2πu₂)`.
//!
//! `splitmix64(z)`: `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//! z *= 0x94D049BB133111EB; z ^= z >> 31` (wrapping multiplies).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MIX: u64 = 0xD1B5_4A32_D192_ED03;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream identifiers so independent noise sources never share draws.
pub mod streams {
    pub const STATE_NOISE: u64 = 1;
    pub const MEASUREMENT_NOISE: u64 = 2;
    pub const TRAINING_SAMPLES: u64 = 3;
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { key: splitmix64(seed ^ stream_id.wrapping_mul(STREAM_MIX)), counter: 0, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }
}

/// First `count` standard normal samples of the state-noise stream for `seed`.
pub fn gaussian_stream(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = CounterRng::new(seed, streams::STATE_NOISE);
    (0..count).map(|_| rng.next_normal()).collect()
}
