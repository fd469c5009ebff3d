//! Numerical reference for the privacy profiles: the tightest delta at a
//! given eps is the integral of (p - e^eps q)+ over the output space, taken
//! at the worst-case adjacent pair. Everything here goes through direct
//! quadrature of that integrand, with no shared code path with the closed
//! forms under test (in particular, no normal CDF).

/// Composite Simpson rule with `intervals` subdivisions (rounded up to even).
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Divergence of N(0, s^2) against N(d, s^2) at budget eps.
///
/// The log density ratio is linear, log p(x) - log q(x) = d(d - 2x)/(2 s^2),
/// so (p - e^eps q) is positive exactly on x < c with c solving the linear
/// equation: c = d/2 - eps s^2 / d. The mass of p below c - 40s is beyond
/// any tolerance used here, so the integral is truncated there.
pub fn gaussian_divergence_oracle(d: f64, s: f64, eps: f64) -> f64 {
    assert!(d > 0.0 && s > 0.0 && eps >= 0.0);
    let c = d / 2.0 - eps * s * s / d;
    let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let p = |x: f64| norm * (-x * x / (2.0 * s * s)).exp();
    let q = |x: f64| norm * (-(x - d) * (x - d) / (2.0 * s * s)).exp();
    let scale = eps.exp();
    let integrand = |x: f64| (p(x) - scale * q(x)).max(0.0);
    simpson(integrand, c - 40.0 * s, c, 50_000)
}

/// Divergence of Lap(0, b) against Lap(d, b) at budget eps.
///
/// The log density ratio is (|x - d| - |x|)/b: constant d/b for x <= 0,
/// then falling linearly on (0, d). A budget at or above d/b is never
/// exceeded and the divergence is zero. Below it, the positive region is
/// x < c with c = (d - b eps)/2, and the integrand is smooth on each side
/// of the density kink at zero, so the quadrature is split there.
pub fn laplace_divergence_oracle(d: f64, b: f64, eps: f64) -> f64 {
    assert!(d > 0.0 && b > 0.0 && eps >= 0.0);
    if eps >= d / b {
        return 0.0;
    }
    let c = (d - b * eps) / 2.0;
    let p = |x: f64| (-(x / b).abs()).exp() / (2.0 * b);
    let q = |x: f64| (-((x - d) / b).abs()).exp() / (2.0 * b);
    let scale = eps.exp();
    let integrand = |x: f64| (p(x) - scale * q(x)).max(0.0);
    simpson(integrand, -50.0 * b, 0.0, 20_000) + simpson(integrand, 0.0, c, 20_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        // Simpson is exact through cubics
        let got = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 2);
        assert!((got - 16.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn laplace_oracle_matches_the_hand_integral_at_zero_eps() {
        // eps = 0 reduces to total variation: 1 - e^{-d/(2b)}
        let got = laplace_divergence_oracle(1.0, 0.5, 0.0);
        let want = 1.0 - (-1.0f64).exp();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn gaussian_oracle_at_zero_eps_is_total_variation() {
        // TV of two unit-variance Gaussians d apart: Phi(d/2) - Phi(-d/2),
        // checked against a frozen value for d = 1: 2 Phi(0.5) - 1
        let got = gaussian_divergence_oracle(1.0, 1.0, 0.0);
        assert!((got - 0.3829249225480263).abs() < 1e-9, "got {got}");
    }
}
