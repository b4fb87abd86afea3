//! Shared reference implementations for integration tests.
#![allow(dead_code)]

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// `(mean, P(T >= t))` of a one-sided one-sample t-test.
pub fn reference_t_test(x: &[f64]) -> (f64, f64) {
    let (mean, sd, n) = moments(x);
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (mean, dist.sf(t))
}

/// `(mean, half-width)` of the two-sided `1 - alpha` t interval.
pub fn reference_interval(x: &[f64], alpha: f64) -> (f64, f64) {
    let (mean, sd, n) = moments(x);
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (mean, dist.inverse_cdf(1.0 - alpha / 2.0) * sd / n.sqrt())
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt(), n)
}

/// Random score set of 2 to 50 values on the grid `lo..=hi` with step
/// `step`, never constant.
pub fn random_scores<R: Rng>(rng: &mut R, lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let levels = ((hi - lo) / step).round() as u32;
    loop {
        let n = rng.random_range(2..=50);
        let x: Vec<f64> = (0..n).map(|_| lo + step * rng.random_range(0..=levels) as f64).collect();
        if x.iter().any(|v| *v != x[0]) {
            return x;
        }
    }
}
