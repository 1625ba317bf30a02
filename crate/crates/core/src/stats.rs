//! Point estimates with confidence intervals, and a small least-squares fit.

use serde::{Deserialize, Serialize};

/// Default two-sided confidence level of reported intervals.
pub const DEFAULT_CI_LEVEL: f64 = 0.99;

/// Standard normal quantile, by bisection on `erfc`.
pub fn normal_quantile(prob: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "normal_quantile needs prob in (0, 1)");
    // Phi(x) = erfc(-x / sqrt 2) / 2
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided z value for a confidence level.
pub fn z_for_level(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    assert!(trials > 0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = z_for_level(level);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Clamp so the point estimate stays inside despite rounding at 0 and 1.
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Monte Carlo estimate with confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
    /// Success count for proportions, `None` for means.
    pub successes: Option<u64>,
    /// Standard error of the point estimate.
    pub std_error: f64,
}

impl EstimateWithCI {
    /// Proportion with a Wilson interval.
    pub fn proportion(successes: u64, trials: u64, level: f64) -> Self {
        let point = successes as f64 / trials as f64;
        let (ci_low, ci_high) = wilson_interval(successes, trials, level);
        EstimateWithCI {
            point,
            ci_low,
            ci_high,
            trials,
            successes: Some(successes),
            std_error: (point * (1.0 - point) / trials as f64).sqrt(),
        }
    }

    /// Mean with a normal-approximation interval from the first two sample
    /// moments.
    pub fn mean(sum: f64, sum_sq: f64, trials: u64, level: f64) -> Self {
        let n = trials as f64;
        let point = sum / n;
        let var = if trials > 1 {
            ((sum_sq - n * point * point) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        let z = z_for_level(level);
        EstimateWithCI {
            point,
            ci_low: point - z * se,
            ci_high: point + z * se,
            trials,
            successes: None,
            std_error: se,
        }
    }

    /// Mean with a normal-approximation interval from a known sample variance.
    pub fn mean_with_variance(point: f64, variance: f64, trials: u64, level: f64) -> Self {
        let se = (variance.max(0.0) / trials as f64).sqrt();
        let z = z_for_level(level);
        EstimateWithCI {
            point,
            ci_low: point - z * se,
            ci_high: point + z * se,
            trials,
            successes: None,
            std_error: se,
        }
    }

    /// Wilson-style standard error evaluated at a reference probability.
    pub fn std_error_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    pub fn overlaps(&self, other: &EstimateWithCI) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 || ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        intercept: my - slope * mx,
        slope,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stream_rng, Lane};
    use rand::Rng;

    #[test]
    fn normal_quantiles() {
        assert!((z_for_level(0.95) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((z_for_level(0.99) - 2.575_829_303_548_901).abs() < 1e-9);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }

    #[test]
    fn wilson_reference_values() {
        // 95% Wilson interval for 10/100: (0.0552, 0.1744) to four places.
        let (lo, hi) = wilson_interval(10, 100, 0.95);
        assert!((lo - 0.05523).abs() < 1e-4 && (hi - 0.17437).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 50, 0.99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.15);
        let e = EstimateWithCI::proportion(50, 50, 0.99);
        assert!(e.ci_low < 1.0 && e.ci_high == 1.0 && e.point == 1.0);
    }

    #[test]
    fn wilson_interval_coverage() {
        // 10^4 repetitions per p; the 99% interval must cover p at least 98%
        // of the time.
        for (k, &p) in [0.01, 0.1, 0.5].iter().enumerate() {
            let mut rng = stream_rng(77, k as u64, Lane::Agents);
            let reps = 10_000;
            let n = 200;
            let mut covered = 0;
            for _ in 0..reps {
                let s = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (lo, hi) = wilson_interval(s, n, 0.99);
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            let rate = covered as f64 / reps as f64;
            assert!(rate >= 0.98, "p = {p}: coverage {rate}");
        }
    }

    #[test]
    fn interval_shrinks_with_trials() {
        let a = EstimateWithCI::proportion(30, 100, 0.99);
        let b = EstimateWithCI::proportion(3000, 10_000, 0.99);
        let ratio = (a.ci_high - a.ci_low) / (b.ci_high - b.ci_low);
        assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12 && (fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&xs, &[0.0, f64::NEG_INFINITY, 1.0, 2.0]).is_none());
    }
}
