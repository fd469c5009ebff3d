//! Sample statistics used by the benchmark command and the distribution tests:
//! Kolmogorov-Smirnov distances, moments, and the reference CDFs they are
//! measured against.

use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

/// One-sample KS statistic against a reference CDF. Sorts a copy of the data.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty());
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// Two-sample KS statistic: the sup-distance between empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        if xs[i] <= ys[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Sample mean and unbiased variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    assert!(n >= 2.0);
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean with a normal-approximation 95% confidence half-width. A single
/// observation carries no spread information; its half-width is reported
/// as zero.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    if xs.len() < 2 {
        assert!(!xs.is_empty());
        return (xs[0], 0.0);
    }
    let (mean, var) = mean_and_variance(xs);
    (mean, 1.96 * (var / xs.len() as f64).sqrt())
}

/// Standard normal CDF, evaluated through erfc to keep the tails accurate.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// CDF of the chi-squared distribution with `k` degrees of freedom.
pub fn chi_squared_cdf(k: u32, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(f64::from(k) / 2.0, x / 2.0)
    }
}
