//! Entropy coding of encoded blocks and the uplink wire format.
//!
//! A block carries two numbers: the geometric trial count H and the lattice
//! point M. They are coded independently. H gets a Golomb code whose parameter
//! is matched to the acceptance probability; when acceptance is certain the
//! trial count is always 1 and contributes no bits at all. M gets a
//! fixed-length index into its support box, the set of integer points the
//! encoder can possibly emit given the clip radius and the drawn level. Both
//! codes are self-delimiting once the level is known, so blocks are packed
//! back to back with no length prefixes and the message is padded to a byte
//! boundary only at the very end.
//!
//! Wire layout: a 20-byte little-endian header (round id, client id, block
//! count, config fingerprint), then the blocks, H code before M code, bits
//! packed most-significant first.

use crate::layered_noise::LatentSample;
use crate::quantizer::{reconstruct, EncodedBlock, LrsuqEncode, QuantizerError, RsuqConfig};
use crate::rng::RandomStream;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodingError {
    #[error("acceptance probability must lie in (0, 1], got {0}")]
    BadAcceptance(f64),
    #[error("clip radius must be finite and nonnegative, got {0}")]
    BadClip(f64),
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error("trial count {0} under a certain-acceptance code; encoder and decoder would desync")]
    ConstantCodeViolation(u64),
    #[error("support box spans more than 2^96 points; the drawn level is degenerate")]
    BoxTooLarge,
    #[error("lattice point lies outside its support box; input exceeded the clip radius?")]
    PointOutsideBox,
    #[error("message ended in the middle of a code word")]
    UnexpectedEnd,
    #[error("message shorter than the fixed header")]
    TruncatedHeader,
    #[error("nonzero bits after the final block")]
    TrailingGarbage,
    #[error("config fingerprint mismatch: message {message:#018x}, local {local:#018x}")]
    ConfigMismatch { message: u64, local: u64 },
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
}

// ---------------------------------------------------------------------------
// bit-level IO, most-significant bit first
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn write_bit(&mut self, bit: bool) {
        let offset = (self.bit_len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << (7 - offset);
        }
        self.bit_len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u128, width: u32) {
        debug_assert!(width <= 128);
        for i in (0..width).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Pads the final partial byte with zeros and returns the buffer.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn bits_remaining(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, CodingError> {
        if self.pos >= self.bytes.len() as u64 * 8 {
            return Err(CodingError::UnexpectedEnd);
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = byte >> (7 - (self.pos % 8) as u8) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u128, CodingError> {
        debug_assert!(width <= 128);
        let mut v = 0u128;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u128;
        }
        Ok(v)
    }

    fn read_unary(&mut self) -> Result<u64, CodingError> {
        let mut q = 0;
        while self.read_bit()? {
            q += 1;
        }
        Ok(q)
    }
}

// ---------------------------------------------------------------------------
// Golomb code for the trial count
// ---------------------------------------------------------------------------

/// Golomb parameter matched to a geometric law with success probability `p`:
/// ceil(-1 / log2(1 - p)). Returns 0 as the "no bits" marker when p = 1.
pub fn golomb_parameter(p: f64) -> Result<u64, CodingError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CodingError::BadAcceptance(p));
    }
    if p == 1.0 {
        return Ok(0);
    }
    let m = (-1.0 / (1.0 - p).log2()).ceil();
    Ok((m as u64).max(1))
}

fn minimal_binary_width(m: u64) -> u32 {
    // smallest b with 2^b >= m
    64 - (m - 1).leading_zeros()
}

/// Code length in bits of trial count `h` under Golomb parameter `m`
/// (0 means the constant code).
pub fn golomb_len(h: u64, m: u64) -> u64 {
    if m == 0 {
        return 0;
    }
    let (q, r) = ((h - 1) / m, (h - 1) % m);
    let b = minimal_binary_width(m);
    let k = (1u64 << b) - m;
    let tail = if m == 1 {
        0
    } else if r < k {
        u64::from(b) - 1
    } else {
        u64::from(b)
    };
    q + 1 + tail
}

/// Unary quotient (q ones, one zero), then a minimal binary remainder.
///
/// Parameter 0 is the zero-bit constant code used when acceptance is certain;
/// it can only represent h = 1, and anything else is refused rather than
/// silently mis-decoded.
pub fn golomb_encode(writer: &mut BitWriter, h: u64, m: u64) -> Result<(), CodingError> {
    if h == 0 {
        return Err(CodingError::ZeroTrials);
    }
    if m == 0 {
        return if h == 1 {
            Ok(())
        } else {
            Err(CodingError::ConstantCodeViolation(h))
        };
    }
    let (q, r) = ((h - 1) / m, (h - 1) % m);
    for _ in 0..q {
        writer.write_bit(true);
    }
    writer.write_bit(false);
    if m > 1 {
        let b = minimal_binary_width(m);
        let k = (1u64 << b) - m;
        if r < k {
            writer.write_bits(r as u128, b - 1);
        } else {
            writer.write_bits((r + k) as u128, b);
        }
    }
    Ok(())
}

pub fn golomb_decode(reader: &mut BitReader, m: u64) -> Result<u64, CodingError> {
    if m == 0 {
        return Ok(1);
    }
    let q = reader.read_unary()?;
    let r = if m == 1 {
        0
    } else {
        let b = minimal_binary_width(m);
        let k = (1u64 << b) - m;
        let t = reader.read_bits(b - 1)? as u64;
        if t < k {
            t
        } else {
            (t << 1 | reader.read_bit()? as u64) - k
        }
    };
    Ok(q * m + r + 1)
}

// ---------------------------------------------------------------------------
// support box and the fixed-length point index
// ---------------------------------------------------------------------------

/// Per-coordinate integer bounds (inclusive) on the lattice point an encoder
/// can emit. For a clip radius gamma and a drawn level with support radius r,
/// every trial point satisfies |j_i| <= (gamma + r) / (beta * alpha) + 1/2,
/// rounded outward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportBox {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl SupportBox {
    pub fn from_bounds(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h), "empty box");
        SupportBox { lo, hi }
    }

    /// Box implied by the clip radius and a drawn level under `config`.
    pub fn for_level(
        clip: f64,
        latent: &LatentSample,
        config: &RsuqConfig,
    ) -> Result<Self, CodingError> {
        if !(clip.is_finite() && clip >= 0.0) {
            return Err(CodingError::BadClip(clip));
        }
        let beta = config
            .noise()
            .beta(latent, config.lattice())
            .map_err(QuantizerError::from)?;
        let denom = beta * config.lattice().scale();
        let half_width = ((clip + latent.radius) / denom + 0.5).ceil();
        if !(half_width.is_finite() && half_width < 4.0e18) {
            return Err(CodingError::BoxTooLarge);
        }
        let w = half_width as i64;
        let n = config.lattice().dimension();
        Ok(SupportBox {
            lo: vec![-w; n],
            hi: vec![w; n],
        })
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        coords.len() == self.lo.len()
            && coords
                .iter()
                .enumerate()
                .all(|(i, &c)| self.lo[i] <= c && c <= self.hi[i])
    }

    pub fn cardinality(&self) -> Result<u128, CodingError> {
        let mut card: u128 = 1;
        for (l, h) in self.lo.iter().zip(&self.hi) {
            let side = (h - l) as u128 + 1;
            card = card.checked_mul(side).ok_or(CodingError::BoxTooLarge)?;
            if card > 1 << 96 {
                return Err(CodingError::BoxTooLarge);
            }
        }
        Ok(card)
    }

    /// Fixed index width: ceil(log2(cardinality)).
    pub fn index_bits(&self) -> Result<u32, CodingError> {
        let card = self.cardinality()?;
        Ok(if card <= 1 {
            0
        } else {
            128 - (card - 1).leading_zeros()
        })
    }
}

/// Row-major mixed-radix index of `coords` inside `sbox`, written at the
/// box's fixed width.
pub fn index_encode(
    writer: &mut BitWriter,
    coords: &[i64],
    sbox: &SupportBox,
) -> Result<(), CodingError> {
    if !sbox.contains(coords) {
        return Err(CodingError::PointOutsideBox);
    }
    let mut idx: u128 = 0;
    for (i, &c) in coords.iter().enumerate() {
        let side = (sbox.hi[i] - sbox.lo[i]) as u128 + 1;
        idx = idx * side + (c - sbox.lo[i]) as u128;
    }
    writer.write_bits(idx, sbox.index_bits()?);
    Ok(())
}

pub fn index_decode(reader: &mut BitReader, sbox: &SupportBox) -> Result<Vec<i64>, CodingError> {
    let mut idx = reader.read_bits(sbox.index_bits()?)?;
    if idx >= sbox.cardinality()? {
        return Err(CodingError::PointOutsideBox);
    }
    let n = sbox.lo.len();
    let mut coords = vec![0i64; n];
    for i in (0..n).rev() {
        let side = (sbox.hi[i] - sbox.lo[i]) as u128 + 1;
        coords[i] = sbox.lo[i] + (idx % side) as i64;
        idx /= side;
    }
    Ok(coords)
}

// ---------------------------------------------------------------------------
// uplink message
// ---------------------------------------------------------------------------

pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageHeader {
    pub round: u32,
    pub client: u32,
    pub block_count: u32,
    pub config_hash: u64,
}

/// FNV-1a over a canonical byte rendering of the codec parameters. Both sides
/// must agree on every field that affects decoding.
pub fn config_fingerprint(config: &RsuqConfig, clip: f64) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    };
    eat(&(config.lattice().dimension() as u64).to_le_bytes());
    eat(&config.lattice().scale().to_bits().to_le_bytes());
    match *config.noise() {
        crate::layered_noise::LayeredNoiseSpec::GaussianIso { sigma, dim } => {
            eat(&[0x01]);
            eat(&sigma.to_bits().to_le_bytes());
            eat(&(dim as u64).to_le_bytes());
        }
        crate::layered_noise::LayeredNoiseSpec::Laplace { b } => {
            eat(&[0x02]);
            eat(&b.to_bits().to_le_bytes());
        }
    }
    eat(&config.max_trials().to_le_bytes());
    eat(&clip.to_bits().to_le_bytes());
    hash
}

/// Serializes one client's round of encoded blocks. Each block needs the
/// latent draw it was encoded under, which the encoder output carries.
pub fn encode_uplink(
    round: u32,
    client: u32,
    encodes: &[LrsuqEncode],
    clip: f64,
    config: &RsuqConfig,
) -> Result<Vec<u8>, CodingError> {
    let p = config.noise().acceptance_probability();
    let m = golomb_parameter(p)?;
    let mut writer = BitWriter::new();
    for enc in encodes {
        golomb_encode(&mut writer, enc.block.h, m)?;
        let sbox = SupportBox::for_level(clip, &enc.latent, config)?;
        index_encode(&mut writer, enc.block.point.coords(), &sbox)?;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + writer.bytes.len());
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&client.to_le_bytes());
    out.extend_from_slice(&(encodes.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_fingerprint(config, clip).to_le_bytes());
    out.extend_from_slice(&writer.finish());
    Ok(out)
}

/// One decoded block: the wire content plus the reconstruction the shared
/// stream yields for it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBlock {
    pub block: EncodedBlock,
    pub reconstruction: Vec<f64>,
}

/// Parses and decodes an uplink message. The stream must sit at the same
/// position the encoder's stream had when it produced the first block; the
/// decode consumes exactly the draws the encoder consumed.
pub fn decode_uplink(
    bytes: &[u8],
    stream: &mut RandomStream,
    clip: f64,
    config: &RsuqConfig,
) -> Result<(MessageHeader, Vec<DecodedBlock>), CodingError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodingError::TruncatedHeader);
    }
    let word = |range: std::ops::Range<usize>| {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[range]);
        u32::from_le_bytes(buf)
    };
    let mut hash_buf = [0u8; 8];
    hash_buf.copy_from_slice(&bytes[12..20]);
    let header = MessageHeader {
        round: word(0..4),
        client: word(4..8),
        block_count: word(8..12),
        config_hash: u64::from_le_bytes(hash_buf),
    };
    let local_hash = config_fingerprint(config, clip);
    if header.config_hash != local_hash {
        return Err(CodingError::ConfigMismatch {
            message: header.config_hash,
            local: local_hash,
        });
    }
    let p = config.noise().acceptance_probability();
    let m = golomb_parameter(p)?;
    let mut reader = BitReader::new(&bytes[HEADER_LEN..]);
    let mut blocks = Vec::with_capacity(header.block_count as usize);
    for _ in 0..header.block_count {
        let latent = config.noise().sample_latent(stream);
        let h = golomb_decode(&mut reader, m)?;
        let sbox = SupportBox::for_level(clip, &latent, config)?;
        let coords = index_decode(&mut reader, &sbox)?;
        let point = config
            .lattice()
            .point(coords)
            .map_err(QuantizerError::from)?;
        let beta = config
            .noise()
            .beta(&latent, config.lattice())
            .map_err(QuantizerError::from)?;
        let mut v = config.lattice().sample_uniform_cell(stream);
        for _ in 1..h {
            v = config.lattice().sample_uniform_cell(stream);
        }
        let reconstruction = reconstruct(beta, &point, &v);
        blocks.push(DecodedBlock {
            block: EncodedBlock { h, point },
            reconstruction,
        });
    }
    if reader.bits_remaining() >= 8 {
        return Err(CodingError::TrailingGarbage);
    }
    while reader.bits_remaining() > 0 {
        if reader.read_bit()? {
            return Err(CodingError::TrailingGarbage);
        }
    }
    Ok((header, blocks))
}

// ---------------------------------------------------------------------------
// rate estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateEstimate {
    pub mean_bits_per_block: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Monte Carlo estimate of the per-block uplink rate: draw levels, simulate
/// the geometric trial count, and measure the realized code lengths of both
/// components.
pub fn estimate_rate(
    config: &RsuqConfig,
    clip: f64,
    samples: u64,
    stream: &mut RandomStream,
) -> Result<RateEstimate, CodingError> {
    assert!(samples >= 2);
    let p = config.noise().acceptance_probability();
    let m = golomb_parameter(p)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let latent = config.noise().sample_latent(stream);
        let h = if p >= 1.0 {
            1
        } else {
            // geometric law by inversion of the survival function
            1 + ((1.0 - stream.uniform()).ln() / (1.0 - p).ln()).floor() as u64
        };
        let sbox = SupportBox::for_level(clip, &latent, config)?;
        let bits = (golomb_len(h, m) + u64::from(sbox.index_bits()?)) as f64;
        sum += bits;
        sum_sq += bits * bits;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(RateEstimate {
        mean_bits_per_block: mean,
        stderr: (var / n).sqrt(),
        samples,
    })
}
