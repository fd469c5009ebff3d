//! Layered (mixture) representation of the target noise law.
//!
//! Both supported laws can be written as a uniform distribution over a random
//! superlevel set of their density: draw a latent level, then sample uniformly
//! from the set the level carves out.
//!
//! * Isotropic Gaussian N(0, sigma^2 I_n): latent is chi-squared with n+2
//!   degrees of freedom, the set is the closed ball of radius sigma*sqrt(u).
//! * Laplace(0, b) in one dimension: latent is Gamma(2, 1), the set is the
//!   open interval (-b*u, b*u).
//!
//! The quantizer only ever interacts with the law through this interface: the
//! latent draw, membership in the level set, the scale factor beta that makes
//! the lattice cell circumscribe the set, and the acceptance probability of a
//! uniform cell point landing inside it.

use crate::lattice::LatticeSpec;
use crate::rng::RandomStream;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise scale must be finite and positive, got {0}")]
    BadScale(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("noise is {noise}-dimensional but the lattice is {lattice}-dimensional")]
    DimensionMismatch { noise: usize, lattice: usize },
    #[error("latent level must be positive, got {0}")]
    BadLatent(f64),
}

/// The noise law in its layered form.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LayeredNoiseSpec {
    /// N(0, sigma^2 I_n).
    GaussianIso { sigma: f64, dim: usize },
    /// Laplace(0, b) on the real line.
    Laplace { b: f64 },
}

impl LayeredNoiseSpec {
    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self, NoiseError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(NoiseError::BadScale(sigma));
        }
        if dim == 0 {
            return Err(NoiseError::ZeroDimension);
        }
        Ok(LayeredNoiseSpec::GaussianIso { sigma, dim })
    }

    pub fn laplace(b: f64) -> Result<Self, NoiseError> {
        if !(b.is_finite() && b > 0.0) {
            return Err(NoiseError::BadScale(b));
        }
        Ok(LayeredNoiseSpec::Laplace { b })
    }

    pub fn dim(&self) -> usize {
        match *self {
            LayeredNoiseSpec::GaussianIso { dim, .. } => dim,
            LayeredNoiseSpec::Laplace { .. } => 1,
        }
    }

    /// Draws the latent level and its support size. Consumes the fixed draw
    /// count of the underlying recipe: chi-squared(n+2) for Gaussian
    /// ((n+2)/2 draws for even n, (n+1)/2 + 2 for odd), Gamma(2,1) = 2 draws
    /// for Laplace.
    pub fn sample_latent(&self, stream: &mut RandomStream) -> LatentSample {
        match *self {
            LayeredNoiseSpec::GaussianIso { sigma, dim } => {
                let u = stream.chi_squared(dim as u32 + 2);
                LatentSample {
                    u,
                    radius: sigma * u.sqrt(),
                }
            }
            LayeredNoiseSpec::Laplace { b } => {
                let u = stream.gamma_2_1();
                LatentSample { u, radius: b * u }
            }
        }
    }

    /// Membership in the level set: closed ball for Gaussian, open interval
    /// for Laplace.
    pub fn superlevel_contains(&self, z: &[f64], latent: &LatentSample) -> bool {
        match *self {
            LayeredNoiseSpec::GaussianIso { .. } => {
                let norm_sq: f64 = z.iter().map(|zi| zi * zi).sum();
                norm_sq.sqrt() <= latent.radius
            }
            LayeredNoiseSpec::Laplace { .. } => z[0].abs() < latent.radius,
        }
    }

    /// Scale factor that makes the scaled basic cell the tightest cube around
    /// the level set: beta = 2 * radius / alpha.
    pub fn beta(&self, latent: &LatentSample, lattice: &LatticeSpec) -> Result<f64, NoiseError> {
        if self.dim() != lattice.dimension() {
            return Err(NoiseError::DimensionMismatch {
                noise: self.dim(),
                lattice: lattice.dimension(),
            });
        }
        if !(latent.u > 0.0 && latent.u.is_finite()) {
            return Err(NoiseError::BadLatent(latent.u));
        }
        Ok(2.0 * latent.radius / lattice.scale())
    }

    /// Probability that a uniform point of the circumscribing cube lands in
    /// the level set. Level-independent: vol(ball)/vol(cube) = V_n / 2^n for
    /// the Gaussian ball (1, pi/4, pi/6 for n = 1, 2, 3), and exactly 1 for
    /// the Laplace interval.
    pub fn acceptance_probability(&self) -> f64 {
        match *self {
            LayeredNoiseSpec::GaussianIso { dim, .. } => {
                // unit-ball volume recurrence V_n = V_{n-2} * 2 pi / n
                let mut vols = vec![1.0, 2.0];
                for n in 2..=dim {
                    let v = vols[n - 2] * std::f64::consts::TAU / n as f64;
                    vols.push(v);
                }
                vols[dim] / 2f64.powi(dim as i32)
            }
            LayeredNoiseSpec::Laplace { .. } => 1.0,
        }
    }

    /// Direct sampler of the law itself. Draws: 2*ceil(n/2) for Gaussian;
    /// 2 for Laplace (difference of two unit exponentials).
    pub fn sample_direct(&self, stream: &mut RandomStream) -> Vec<f64> {
        match *self {
            LayeredNoiseSpec::GaussianIso { sigma, dim } => {
                let mut z = vec![0.0; dim];
                stream.fill_normal(&mut z);
                for zi in &mut z {
                    *zi *= sigma;
                }
                z
            }
            LayeredNoiseSpec::Laplace { b } => {
                vec![b * (stream.exponential() - stream.exponential())]
            }
        }
    }

    /// Sampler through the layered representation: latent level, then a
    /// uniform point of the level set. Must agree in law with
    /// [`sample_direct`](Self::sample_direct); the distribution tests check
    /// exactly that.
    pub fn sample_mixture(&self, stream: &mut RandomStream) -> Vec<f64> {
        let latent = self.sample_latent(stream);
        match *self {
            LayeredNoiseSpec::GaussianIso { dim, .. } => {
                // uniform in the ball: isotropic direction, radius ~ R*U^(1/n)
                let mut dir = vec![0.0; dim];
                stream.fill_normal(&mut dir);
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                let r = latent.radius * stream.uniform().powf(1.0 / dim as f64);
                dir.iter().map(|d| d / norm * r).collect()
            }
            LayeredNoiseSpec::Laplace { .. } => {
                vec![2.0 * latent.radius * (0.5 - stream.uniform())]
            }
        }
    }

    /// Density of the target law at `z`.
    pub fn pdf(&self, z: &[f64]) -> f64 {
        match *self {
            LayeredNoiseSpec::GaussianIso { sigma, dim } => {
                let norm_sq: f64 = z.iter().map(|zi| zi * zi).sum();
                let log_pdf = -norm_sq / (2.0 * sigma * sigma)
                    - 0.5 * dim as f64 * (std::f64::consts::TAU * sigma * sigma).ln();
                log_pdf.exp()
            }
            LayeredNoiseSpec::Laplace { b } => (-z[0].abs() / b).exp() / (2.0 * b),
        }
    }
}

/// A drawn latent level plus the size of its level set: the ball radius
/// sigma*sqrt(u) for Gaussian, the interval half-width b*u for Laplace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSample {
    pub u: f64,
    pub radius: f64,
}
