//! Small statistical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Two-sided Student-t critical value at level `alpha` with `df` degrees of
/// freedom. Falls back to the normal quantile for huge df.
pub fn t_critical_two_sided(alpha: f64, df: usize) -> f64 {
    if df == 0 {
        return f64::INFINITY;
    }
    if df > 200_000 {
        return normal_quantile(1.0 - alpha / 2.0);
    }
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("valid t distribution")
        .inverse_cdf(1.0 - alpha / 2.0)
}

/// One-sample Kolmogorov-Smirnov statistic against the standard normal.
pub fn ks_statistic_standard_normal(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(*x);
        let upper = (i as f64 + 1.0) / n - cdf;
        let lower = cdf - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    d
}

/// Asymptotic Kolmogorov p-value for the KS statistic `d` at sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let t = (n as f64).sqrt() * d;
    if t < 1e-8 {
        return 1.0;
    }
    // Kolmogorov distribution tail: 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2)
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * t * t).exp();
        if term < 1e-16 {
            break;
        }
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    p.clamp(0.0, 1.0)
}

/// Wilson 95% score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

/// Pearson correlation of two slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    assert_eq!(n, b.len());
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantile_matches_known_values() {
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959964, epsilon = 1e-5);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wilson_interval_contains_point_rate() {
        let (lo, hi) = wilson_interval(450, 500);
        let p = 0.9;
        assert!(lo < p && p < hi);
        // half-width bound used by the simulation report contract
        assert!((hi - lo) / 2.0 <= 0.046, "half width {}", (hi - lo) / 2.0);
    }

    #[test]
    fn ks_p_value_is_monotone_in_d() {
        let p1 = ks_p_value(0.02, 1000);
        let p2 = ks_p_value(0.08, 1000);
        assert!(p1 > p2);
        assert!(p1 <= 1.0 && p2 >= 0.0);
    }
}
