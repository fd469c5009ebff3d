//! Dithered lattice quantizers, from plain subtractive dithering to the
//! layered rejection-sampled codec whose error follows the target noise law
//! exactly.
//!
//! Subtractive dithering (`sdq_*`) quantizes x - v and adds the shared dither
//! v back at the decoder; the error is uniform on the basic cell regardless of
//! x. Rejection sampling (`rsuq_encode`) redraws the dither until the error
//! lands in a chosen subset of the cell, shaping the error law to uniform on
//! that subset at a geometric cost in trials. The layered codec
//! (`lrsuq_encode`/`lrsuq_decode`) runs the rejection loop on a lattice scaled
//! by a latent level draw, so the overall error is a mixture of uniforms that
//! reproduces the Gaussian or Laplace target exactly.
//!
//! Only the trial count and the integer lattice point cross the wire. The
//! decoder regenerates the latent level and all dithers from the shared
//! stream, consuming exactly the draws the encoder consumed: one latent recipe
//! plus h * n dither components per block. Both sides compute the
//! reconstruction through the same [`reconstruct`] helper, which makes the
//! round trip bit-exact rather than merely close.

use crate::lattice::{LatticeError, LatticePoint, LatticeSpec};
use crate::layered_noise::{LatentSample, LayeredNoiseSpec, NoiseError};
use crate::rng::RandomStream;
use thiserror::Error;

pub const DEFAULT_MAX_TRIALS: u64 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizerError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("dither lies outside the basic cell")]
    DitherOutsideCell,
    #[error("no accepted dither after {trials} trials; target set may have near-zero volume")]
    MaxTrialsExceeded { trials: u64 },
    #[error("max_trials must be at least 1")]
    ZeroTrials,
}

/// Everything the layered codec needs on both sides of the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct RsuqConfig {
    lattice: LatticeSpec,
    noise: LayeredNoiseSpec,
    max_trials: u64,
}

impl RsuqConfig {
    pub fn new(
        lattice: LatticeSpec,
        noise: LayeredNoiseSpec,
        max_trials: u64,
    ) -> Result<Self, QuantizerError> {
        if noise.dim() != lattice.dimension() {
            return Err(QuantizerError::Noise(NoiseError::DimensionMismatch {
                noise: noise.dim(),
                lattice: lattice.dimension(),
            }));
        }
        if max_trials == 0 {
            return Err(QuantizerError::ZeroTrials);
        }
        Ok(RsuqConfig {
            lattice,
            noise,
            max_trials,
        })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn noise(&self) -> &LayeredNoiseSpec {
        &self.noise
    }

    pub fn max_trials(&self) -> u64 {
        self.max_trials
    }
}

/// One block's wire content: the accepted trial index and the lattice point.
/// The latent level is deliberately absent; the decoder regenerates it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlock {
    pub h: u64,
    pub point: LatticePoint,
}

/// Encoder output: the block to transmit plus the quantities the caller keeps
/// locally (its own reconstruction and the latent draw, which the entropy
/// coder needs for sizing).
#[derive(Debug, Clone, PartialEq)]
pub struct LrsuqEncode {
    pub block: EncodedBlock,
    pub reconstruction: Vec<f64>,
    pub latent: LatentSample,
}

/// The one reconstruction expression both encoder and decoder use:
/// y = beta * (embedding + dither), term by term. Keeping it in a single
/// function is what guarantees bit-for-bit agreement across the wire.
pub fn reconstruct(beta: f64, point: &LatticePoint, dither: &[f64]) -> Vec<f64> {
    point
        .embedding()
        .iter()
        .zip(dither)
        .map(|(e, v)| beta * (e + v))
        .collect()
}

/// Quantizes x - v to the lattice. The error of `sdq_decode(sdq_encode(x, v), v)`
/// relative to x is the cell offset of x - v, so with v uniform on the cell the
/// error is uniform on the cell and independent of x.
pub fn sdq_encode(
    x: &[f64],
    dither: &[f64],
    lattice: &LatticeSpec,
) -> Result<LatticePoint, QuantizerError> {
    if !lattice.basic_cell().contains(dither) {
        return Err(QuantizerError::DitherOutsideCell);
    }
    let shifted: Vec<f64> = x.iter().zip(dither).map(|(xi, vi)| xi - vi).collect();
    Ok(lattice.nearest_point(&shifted)?)
}

/// Adds the shared dither back: y = embedding + v.
pub fn sdq_decode(point: &LatticePoint, dither: &[f64]) -> Vec<f64> {
    point
        .embedding()
        .iter()
        .zip(dither)
        .map(|(e, v)| e + v)
        .collect()
}

/// Redraws the dither until the quantization error Q(x - v) + v - x lies in
/// the target set. Returns the accepted trial index (1-based) and the point.
/// The target set must be a positive-volume subset of the basic cell, given as
/// a membership predicate on the error vector.
pub fn rsuq_encode(
    x: &[f64],
    stream: &mut RandomStream,
    lattice: &LatticeSpec,
    target_contains: impl Fn(&[f64]) -> bool,
    max_trials: u64,
) -> Result<(u64, LatticePoint), QuantizerError> {
    if max_trials == 0 {
        return Err(QuantizerError::ZeroTrials);
    }
    for h in 1..=max_trials {
        let v = lattice.sample_uniform_cell(stream);
        let point = sdq_encode(x, &v, lattice)?;
        let err: Vec<f64> = sdq_decode(&point, &v)
            .iter()
            .zip(x)
            .map(|(yi, xi)| yi - xi)
            .collect();
        if target_contains(&err) {
            return Ok((h, point));
        }
    }
    Err(QuantizerError::MaxTrialsExceeded { trials: max_trials })
}

/// Layered encode: draw the latent level, scale the input down by beta(u), and
/// rejection-sample dithers until the unscaled error lands in the level set.
///
/// Stream draws: one latent recipe + h * n dither components.
pub fn lrsuq_encode(
    x: &[f64],
    stream: &mut RandomStream,
    config: &RsuqConfig,
) -> Result<LrsuqEncode, QuantizerError> {
    let latent = config.noise.sample_latent(stream);
    let beta = config.noise.beta(&latent, &config.lattice)?;
    let x_scaled: Vec<f64> = x.iter().map(|xi| xi / beta).collect();
    for h in 1..=config.max_trials {
        let v = config.lattice.sample_uniform_cell(stream);
        let shifted: Vec<f64> = x_scaled.iter().zip(&v).map(|(xi, vi)| xi - vi).collect();
        let point = config.lattice.nearest_point(&shifted)?;
        let y = reconstruct(beta, &point, &v);
        let err: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi - xi).collect();
        if config.noise.superlevel_contains(&err, &latent) {
            return Ok(LrsuqEncode {
                block: EncodedBlock { h, point },
                reconstruction: y,
                latent,
            });
        }
    }
    Err(QuantizerError::MaxTrialsExceeded {
        trials: config.max_trials,
    })
}

/// Layered decode: regenerate the latent level and exactly h dither vectors
/// from the shared stream, then rebuild y = beta * (m + v_h). Output is
/// bit-identical to the encoder's reconstruction.
pub fn lrsuq_decode(
    block: &EncodedBlock,
    stream: &mut RandomStream,
    config: &RsuqConfig,
) -> Result<Vec<f64>, QuantizerError> {
    let latent = config.noise.sample_latent(stream);
    let beta = config.noise.beta(&latent, &config.lattice)?;
    let mut v = config.lattice.sample_uniform_cell(stream);
    for _ in 1..block.h {
        v = config.lattice.sample_uniform_cell(stream);
    }
    Ok(reconstruct(beta, &block.point, &v))
}
