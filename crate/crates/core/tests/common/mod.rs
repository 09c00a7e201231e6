//! Statistics shared by the Monte Carlo tests.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's statistic for `observed` against the
/// probabilities `expected` (which need not be normalized).
pub fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let mass: f64 = expected.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        let e = e / mass * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(o, 0, "draw in a cell of zero mass");
        }
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Two-sample homogeneity p-value for two count vectors over the same cells.
pub fn chi_square_two_sample_p(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let pooled = (x + y) as f64;
        if pooled == 0.0 {
            continue;
        }
        let ea = pooled * na / (na + nb);
        let eb = pooled * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Asserts that `|mean - truth| <= k·se`.
pub fn assert_within_sigma(xs: &[f64], truth: f64, k: f64, what: &str) {
    let (mean, se) = mean_se(xs);
    assert!((mean - truth).abs() <= k * se, "{what}: mean {mean} truth {truth} se {se}");
}
