//! Paired randomization (sign-flip) test on per-query metric differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Two-sided p-value for the mean of `a − b`.
///
/// Each iteration flips the sign of every paired difference independently
/// with probability 1/2; the p-value is `(1 + #{|permuted mean| ≥ |observed|})
/// / (1 + iterations)`.
pub fn paired_randomization_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("paired samples are empty"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    // Absorbs rounding in the permuted sums so exact ties count as extreme.
    let tolerance = 1e-12 * observed.max(1.0);

    let mut rng = rng::stream(seed, "significance");
    let mut extreme = 0usize;
    for _ in 0..iterations {
        let sum: f64 = diffs.iter().map(|d| if rng.random::<bool>() { *d } else { -*d }).sum();
        if (sum / n).abs() >= observed - tolerance {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (iterations + 1) as f64)
}
