//! Privacy accounting: closed-form divergence profiles for the two noise
//! mechanisms, group composition, and amplification by subsampling with
//! replacement.
//!
//! A profile maps a privacy level eps to the tightest delta such that the
//! mechanism is (eps, delta)-differentially private. The federated round
//! bound composes three pieces: the base profile at the mechanism's
//! sensitivity, the group-privacy inflation for records hit multiple times by
//! sampling with replacement, and the binomial mixture over how many of the
//! round's draws touched the changed record.
//!
//! Everything here must stay finite for extreme budgets (the Laplace
//! experiments run at eps around 3e4), so products of huge and tiny factors
//! are evaluated in log space and the final bound saturates at 1.

use crate::stats::normal_cdf;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("privacy level eps must be nonnegative and finite, got {0}")]
    BadEpsilon(f64),
    #[error("sensitivity must be finite and positive, got {0}")]
    BadSensitivity(f64),
    #[error("noise scale must be finite and positive, got {0}")]
    BadNoiseScale(f64),
    #[error("group size must be at least 1")]
    ZeroGroup,
    #[error("dataset size must be at least 1")]
    EmptyDataset,
    #[error("local iteration count must be at least 1")]
    ZeroIterations,
    #[error("client count must be at least 1")]
    ZeroClients,
    #[error("clip radius must be finite and positive, got {0}")]
    BadClip(f64),
    #[error("delta target must lie in (0, 1), got {0}")]
    BadDeltaTarget(f64),
    #[error(
        "target delta {target:.3e} is not reachable: the bound stays below \
         {supremum:.3e} for every positive noise scale, so no scale solves the equation"
    )]
    CalibrationInfeasible { target: f64, supremum: f64 },
    #[error("bisection failed to bracket the target")]
    NoBracket,
}

// ---------------------------------------------------------------------------
// log-space helpers
// ---------------------------------------------------------------------------

/// ln(e^t - 1) without overflow.
fn ln_expm1(t: f64) -> f64 {
    if t > 36.0 {
        // e^{-t} < 2e-16: ln(e^t - 1) = t + ln(1 - e^{-t}) = t to full precision
        t + (-(-t).exp()).ln_1p()
    } else {
        t.exp_m1().ln()
    }
}

/// ln(1 + e^t) without overflow.
fn ln_1p_exp(t: f64) -> f64 {
    if t > 36.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// ln(Phi(x)); asymptotic expansion once erfc underflows.
fn log_norm_cdf(x: f64) -> f64 {
    if x > -36.0 {
        normal_cdf(x).ln()
    } else {
        log_norm_cdf_tail(x)
    }
}

/// Phi(-t) = phi(t)/t * (1 - 1/t^2 + 3/t^4 - 15/t^6 + 105/t^8 - ...),
/// accurate to better than 1e-7 relative for t >= 20.
fn log_norm_cdf_tail(x: f64) -> f64 {
    let t = -x;
    let t2 = t * t;
    let series =
        1.0 - 1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2) + 105.0 / (t2 * t2 * t2 * t2);
    -0.5 * t2 - 0.5 * (std::f64::consts::TAU).ln() - t.ln() + series.ln()
}

// ---------------------------------------------------------------------------
// base profiles
// ---------------------------------------------------------------------------

/// A mechanism's privacy profile: delta as a function of eps.
#[derive(Debug, Clone, PartialEq)]
pub enum PrivacyProfile {
    /// Gaussian mechanism with l2 sensitivity `delta2` and noise scale `sigma`.
    Gaussian { delta2: f64, sigma: f64 },
    /// Laplace mechanism with l1 sensitivity `delta1` and scale `b`.
    Laplace { delta1: f64, b: f64 },
}

impl PrivacyProfile {
    pub fn gaussian(delta2: f64, sigma: f64) -> Result<Self, PrivacyError> {
        if !(delta2.is_finite() && delta2 > 0.0) {
            return Err(PrivacyError::BadSensitivity(delta2));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PrivacyError::BadNoiseScale(sigma));
        }
        Ok(PrivacyProfile::Gaussian { delta2, sigma })
    }

    pub fn laplace(delta1: f64, b: f64) -> Result<Self, PrivacyError> {
        if !(delta1.is_finite() && delta1 > 0.0) {
            return Err(PrivacyError::BadSensitivity(delta1));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(PrivacyError::BadNoiseScale(b));
        }
        Ok(PrivacyProfile::Laplace { delta1, b })
    }

    /// Tightest delta at privacy level `eps`.
    ///
    /// Gaussian: Phi(d/(2s) - eps*s/d) - e^eps * Phi(-d/(2s) - eps*s/d),
    /// with the second term evaluated as exp(eps + ln Phi) so nothing
    /// overflows. Laplace: [1 - e^{(eps - d/b)/2}]_+ .
    pub fn delta(&self, eps: f64) -> Result<f64, PrivacyError> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(PrivacyError::BadEpsilon(eps));
        }
        Ok(match *self {
            PrivacyProfile::Gaussian { delta2, sigma } => {
                let a = delta2 / (2.0 * sigma) - eps * sigma / delta2;
                let b = -delta2 / (2.0 * sigma) - eps * sigma / delta2;
                let second = (eps + log_norm_cdf(b)).exp();
                (normal_cdf(a) - second).clamp(0.0, 1.0)
            }
            PrivacyProfile::Laplace { delta1, b } => {
                (-((eps - delta1 / b) / 2.0).exp_m1()).max(0.0)
            }
        })
    }
}

/// Group-privacy inflation: a profile delta_F for single-record changes bounds
/// the profile for j simultaneous changes by
/// (e^eps - 1) / (e^{eps/j} - 1) * delta_F(eps / j).
///
/// The multiplier is computed in log space (at eps = 3e4 it overflows any
/// float), and the result is NOT clamped to 1; callers that mix it into a
/// probability must saturate themselves.
pub fn group_profile_bound(
    profile: &PrivacyProfile,
    group: u32,
    eps: f64,
) -> Result<f64, PrivacyError> {
    if group == 0 {
        return Err(PrivacyError::ZeroGroup);
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(PrivacyError::BadEpsilon(eps));
    }
    if group == 1 {
        return profile.delta(eps);
    }
    let j = f64::from(group);
    let base = profile.delta(eps / j)?;
    if base == 0.0 {
        return Ok(0.0);
    }
    if eps == 0.0 {
        // limit of the multiplier as eps -> 0
        return Ok(j * base);
    }
    Ok((ln_expm1(eps) - ln_expm1(eps / j) + base.ln()).exp())
}

/// Probability that a fixed record is touched at least once by `local_iters`
/// uniform draws with replacement from a dataset of the given size.
pub fn sampling_probability(dataset_size: u64, local_iters: u32) -> f64 {
    let q = 1.0 / dataset_size as f64;
    -(f64::from(local_iters) * (-q).ln_1p()).exp_m1()
}

/// Inverts the amplification map: the base budget a mechanism must meet so
/// that subsampling lands exactly on `eps_target`.
pub fn amplified_base_epsilon(eps_target: f64, dataset_size: u64, local_iters: u32) -> f64 {
    let p = sampling_probability(dataset_size, local_iters);
    (eps_target.exp_m1() / p).ln_1p()
}

/// Amplification by subsampling with replacement: a mechanism with base
/// profile `profile` at level `eps_base`, run on `local_iters` samples drawn
/// with replacement from a dataset of `dataset_size` records, satisfies
/// (eps, delta)-privacy with
///
///   eps   = ln(1 + p (e^{eps_base} - 1)),         p = sampling probability,
///   delta = sum_j Binom(local_iters, 1/|D|)(j) * group_bound_j(eps_base),
///
/// the sum saturating at 1.
pub fn amplified_delta_subsampling(
    profile: &PrivacyProfile,
    dataset_size: u64,
    local_iters: u32,
    eps_base: f64,
) -> Result<(f64, f64), PrivacyError> {
    if dataset_size == 0 {
        return Err(PrivacyError::EmptyDataset);
    }
    if local_iters == 0 {
        return Err(PrivacyError::ZeroIterations);
    }
    if !(eps_base >= 0.0 && eps_base.is_finite()) {
        return Err(PrivacyError::BadEpsilon(eps_base));
    }
    let p = sampling_probability(dataset_size, local_iters);
    let eps = if eps_base > 500.0 {
        // ln(1 + p(e^eb - 1)) with e^eb far beyond overflow:
        // ln(p) + eb + ln(1 - e^{-eb}) then fold in the outer 1+
        ln_1p_exp(p.ln() + ln_expm1(eps_base))
    } else {
        (p * eps_base.exp_m1()).ln_1p()
    };

    let q = 1.0 / dataset_size as f64;
    let tau = f64::from(local_iters);
    // binomial weights by upward recurrence; w_1 is exact, which the
    // local_iters = 1 reduction relies on
    let mut weight = tau * q * (1.0 - q).powi(local_iters as i32 - 1);
    let mut delta = 0.0;
    for j in 1..=local_iters {
        if weight == 0.0 {
            break;
        }
        let bound = group_profile_bound(profile, j, eps_base)?;
        let term = weight * bound;
        if !term.is_finite() || delta + term >= 1.0 {
            return Ok((eps, 1.0));
        }
        delta += term;
        weight *= (tau - f64::from(j)) / f64::from(j + 1) * q / (1.0 - q);
    }
    Ok((eps, delta.clamp(0.0, 1.0)))
}

// ---------------------------------------------------------------------------
// federated round reports
// ---------------------------------------------------------------------------

/// Privacy of one federated round, as reported by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundPrivacyReport {
    pub mechanism: &'static str,
    pub eps_base: f64,
    pub eps: f64,
    pub delta: f64,
    pub sensitivity: f64,
    pub noise_scale: f64,
    pub clip: f64,
    pub local_iters: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<u32>,
    pub dataset_size: u64,
    pub sampling_probability: f64,
}

fn check_round_inputs(clip: f64, local_iters: u32, dataset_size: u64) -> Result<(), PrivacyError> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(PrivacyError::BadClip(clip));
    }
    if local_iters == 0 {
        return Err(PrivacyError::ZeroIterations);
    }
    if dataset_size == 0 {
        return Err(PrivacyError::EmptyDataset);
    }
    Ok(())
}

/// Round bound for the Gaussian mechanism on the averaged update: the l2
/// sensitivity of the average is 2 * local_iters * clip / clients and the
/// effective noise scale is sigma / sqrt(clients).
pub fn cepam_gaussian_round(
    clip: f64,
    local_iters: u32,
    clients: u32,
    sigma: f64,
    dataset_size: u64,
    eps_base: f64,
) -> Result<RoundPrivacyReport, PrivacyError> {
    check_round_inputs(clip, local_iters, dataset_size)?;
    if clients == 0 {
        return Err(PrivacyError::ZeroClients);
    }
    let sensitivity = 2.0 * f64::from(local_iters) * clip / f64::from(clients);
    let noise_scale = sigma / f64::from(clients).sqrt();
    let profile = PrivacyProfile::gaussian(sensitivity, noise_scale)?;
    let (eps, delta) = amplified_delta_subsampling(&profile, dataset_size, local_iters, eps_base)?;
    Ok(RoundPrivacyReport {
        mechanism: "gaussian",
        eps_base,
        eps,
        delta,
        sensitivity,
        noise_scale,
        clip,
        local_iters,
        clients: Some(clients),
        dataset_size,
        sampling_probability: sampling_probability(dataset_size, local_iters),
    })
}

/// Round bound for the Laplace mechanism on a single client's update: the l1
/// sensitivity is 2 * local_iters * clip. When the budget covers the
/// sensitivity (eps_base >= sensitivity / b) the mechanism is pure-DP and
/// subsampling keeps delta at exactly zero.
pub fn cepam_laplace_round(
    clip: f64,
    local_iters: u32,
    b: f64,
    dataset_size: u64,
    eps_base: f64,
) -> Result<RoundPrivacyReport, PrivacyError> {
    check_round_inputs(clip, local_iters, dataset_size)?;
    if !(b.is_finite() && b > 0.0) {
        return Err(PrivacyError::BadNoiseScale(b));
    }
    if !(eps_base >= 0.0 && eps_base.is_finite()) {
        return Err(PrivacyError::BadEpsilon(eps_base));
    }
    let sensitivity = 2.0 * f64::from(local_iters) * clip;
    let profile = PrivacyProfile::laplace(sensitivity, b)?;
    let p = sampling_probability(dataset_size, local_iters);
    let (eps, delta) = if eps_base >= sensitivity / b {
        let eps = if eps_base > 500.0 {
            ln_1p_exp(p.ln() + ln_expm1(eps_base))
        } else {
            (p * eps_base.exp_m1()).ln_1p()
        };
        (eps, 0.0)
    } else {
        amplified_delta_subsampling(&profile, dataset_size, local_iters, eps_base)?
    };
    Ok(RoundPrivacyReport {
        mechanism: "laplace",
        eps_base,
        eps,
        delta,
        sensitivity,
        noise_scale: b,
        clip,
        local_iters,
        clients: None,
        dataset_size,
        sampling_probability: p,
    })
}

/// Supremum of the amplified delta over all noise scales (the sigma -> 0
/// limit, where every base profile value saturates at 1). Targets at or above
/// this are not equations in sigma at all.
fn amplified_delta_supremum(
    dataset_size: u64,
    local_iters: u32,
    eps_base: f64,
) -> Result<f64, PrivacyError> {
    let q = 1.0 / dataset_size as f64;
    let tau = f64::from(local_iters);
    let mut weight = tau * q * (1.0 - q).powi(local_iters as i32 - 1);
    let mut delta = 0.0;
    for j in 1..=local_iters {
        if weight == 0.0 {
            break;
        }
        let mult = if j == 1 {
            1.0
        } else if eps_base == 0.0 {
            f64::from(j)
        } else {
            (ln_expm1(eps_base) - ln_expm1(eps_base / f64::from(j))).exp()
        };
        let term = weight * mult;
        if !term.is_finite() || delta + term >= 1.0 {
            return Ok(1.0);
        }
        delta += term;
        weight *= (tau - f64::from(j)) / f64::from(j + 1) * q / (1.0 - q);
    }
    Ok(delta.min(1.0))
}

/// Smallest Gaussian scale sigma whose round bound meets (eps_target,
/// delta_target): solves the base budget from the amplification identity,
/// then bisects on the monotone map sigma -> delta. Returns the upper end of
/// the final bracket, so the result always satisfies delta <= delta_target;
/// the bracket is shrunk to relative width 1e-9.
pub fn calibrate_sigma(
    eps_target: f64,
    delta_target: f64,
    clip: f64,
    local_iters: u32,
    clients: u32,
    dataset_size: u64,
) -> Result<f64, PrivacyError> {
    check_round_inputs(clip, local_iters, dataset_size)?;
    if clients == 0 {
        return Err(PrivacyError::ZeroClients);
    }
    if !(eps_target > 0.0 && eps_target < 500.0) {
        return Err(PrivacyError::BadEpsilon(eps_target));
    }
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(PrivacyError::BadDeltaTarget(delta_target));
    }
    let p = sampling_probability(dataset_size, local_iters);
    // invert eps = ln(1 + p(e^eb - 1)) for the base budget
    let eps_base = (eps_target.exp_m1() / p).ln_1p();
    let supremum = amplified_delta_supremum(dataset_size, local_iters, eps_base)?;
    if delta_target >= supremum {
        return Err(PrivacyError::CalibrationInfeasible {
            target: delta_target,
            supremum,
        });
    }
    let delta_at = |sigma: f64| -> Result<f64, PrivacyError> {
        Ok(cepam_gaussian_round(clip, local_iters, clients, sigma, dataset_size, eps_base)?.delta)
    };
    let mut lo = 1e-12;
    let mut hi = 1.0;
    let mut guard = 0;
    while delta_at(hi)? > delta_target {
        hi *= 4.0;
        guard += 1;
        if guard > 200 {
            return Err(PrivacyError::NoBracket);
        }
    }
    if delta_at(lo)? < delta_target {
        return Err(PrivacyError::NoBracket);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delta_at(mid)? > delta_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi <= 1e-9 {
            break;
        }
    }
    Ok(hi)
}
