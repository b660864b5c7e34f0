//! Binomial confidence intervals.

use statrs::distribution::{ContinuousCDF, Normal};

/// Wilson score interval for `successes` out of `trials` at the given
/// two-sided confidence level.
pub fn wilson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    assert!((0.0..1.0).contains(&confidence));
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let denom = 1.0 + z2 / n;
    (((centre - spread) / denom).max(0.0), ((centre + spread) / denom).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_values() {
        // 10 of 100 at 95%: (0.0552, 0.1744)
        let (lo, hi) = wilson(10, 100, 0.95);
        assert!((lo - 0.05523).abs() < 1e-4 && (hi - 0.17437).abs() < 1e-4, "{lo} {hi}");
        // zero successes keep a positive upper bound
        let (lo, hi) = wilson(0, 10_000, 0.99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 1e-3);
    }
}
