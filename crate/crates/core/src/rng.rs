//! Deterministic counter-based pseudorandom stream shared by client and server.
//!
//! Decoding regenerates the encoder's dither draws from a common seed, so the
//! generator is part of the wire contract: the mapping from (seed, counter) to
//! output is pinned by [`GENERATOR_ID`] and must never change. Each output is
//! the SplitMix64 finalizer applied to `seed + counter * GOLDEN`, which gives
//! O(1) seeking and cheap splitting without carrying buffer state.
//!
//! Every sampling helper documents exactly how many raw draws it consumes.
//! Integer draws are bit-reproducible everywhere; the f64 transforms go
//! through libm (`ln`, `cos`), so cross-platform identity holds only as far
//! as the platform math library agrees. Identity across runs of one build is
//! unconditional.

/// Version tag for the stream contract. Bump only with a wire-format change.
pub const GENERATOR_ID: &str = "cepam-sm64ctr-v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: state is just (seed, position).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, counter: 0 }
    }

    /// Derives an independent child stream; used to give each client its own
    /// shared-seed stream from one master seed.
    pub fn child(&self, tag: u64) -> Self {
        RandomStream {
            seed: mix(self.seed ^ mix(tag.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    /// Number of raw 64-bit draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// One raw draw.
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on [0, 1) with 53-bit resolution. 1 draw.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform on (0, 1]; safe argument for `ln`. 1 draw.
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Unit exponential via inversion. 1 draw.
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_pos().ln()
    }

    /// Pair of independent standard normals (Box-Muller). 2 draws.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let r = (2.0 * self.exponential()).sqrt();
        let theta = std::f64::consts::TAU * self.uniform();
        (r * theta.cos(), r * theta.sin())
    }

    /// Fills `out` with standard normals. `2 * ceil(len/2)` draws: odd lengths
    /// consume a full Box-Muller pair and discard the second half.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.normal_pair();
            out[i] = a;
            out[i + 1] = b;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.normal_pair().0;
        }
    }

    /// Chi-squared with `k` degrees of freedom, as a fixed-count exact
    /// transform: `k/2` exponentials summed when `k` is even, plus one squared
    /// normal when odd. Draws: `k/2` (even) or `(k-1)/2 + 2` (odd).
    pub fn chi_squared(&mut self, k: u32) -> f64 {
        assert!(k >= 1, "chi-squared needs at least one degree of freedom");
        let mut s = 0.0;
        for _ in 0..k / 2 {
            s += 2.0 * self.exponential();
        }
        if k % 2 == 1 {
            let z = self.normal_pair().0;
            s += z * z;
        }
        s
    }

    /// Gamma(2, 1): sum of two unit exponentials. 2 draws.
    pub fn gamma_2_1(&mut self) -> f64 {
        self.exponential() + self.exponential()
    }

    /// Uniform integer in [0, bound), exactly equidistributed by rejection.
    /// The draw count is variable, so this must not be used on a stream the
    /// decoder replays; it exists for dataset shuffling and sample picks.
    pub fn uniform_int(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }
}
