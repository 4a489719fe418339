//! Kernel independence measurement: HSIC with a seeded permutation test.
//!
//! This is the enforcement mechanism behind every additive-noise-model fit in
//! the crate: a mechanism estimate is accepted only if the residuals look
//! independent of the cause, and HSIC with a permutation null is the
//! operational meaning of "look independent".

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::util::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DependenceError {
    #[error("sample length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least 99 permutations, got {0}")]
    TooFewPermutations(usize),
}

/// Outcome of a permutation test of independence.
#[derive(Debug, Clone, PartialEq)]
pub struct HsicResult {
    /// Biased V-statistic, `trace(K H L H) / n^2`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Median pairwise distance; 1.0 when the median vanishes (e.g. constant
/// input), so the kernel stays well defined.
pub(crate) fn median_bandwidth(v: &[f64]) -> f64 {
    let n = v.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((v[i] - v[j]).abs());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("non-finite distance"));
    let med = if dists.is_empty() {
        0.0
    } else if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Doubly centered Gaussian Gram matrix (H K H), stored row-major.
fn centered_gram(v: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = v.len();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let d = v[i] - v[j];
            let val = (-d * d * inv).exp();
            k[i * n + j] = val;
            k[j * n + i] = val;
        }
    }
    center_in_place(&mut k, n);
    k
}

fn center_in_place(k: &mut [f64], n: usize) {
    let mut row_means = vec![0.0; n];
    for i in 0..n {
        row_means[i] = k[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] += grand - row_means[i] - row_means[j];
        }
    }
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<usize, DependenceError> {
    if x.len() != y.len() {
        return Err(DependenceError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 4 {
        return Err(DependenceError::TooFewSamples { need: 4, got: x.len() });
    }
    Ok(x.len())
}

/// HSIC V-statistic with Gaussian kernels and median-heuristic bandwidths.
pub fn hsic(x: &[f64], y: &[f64]) -> Result<f64, DependenceError> {
    let n = check_inputs(x, y)?;
    let kx = centered_gram(x, median_bandwidth(x));
    let ky = centered_gram(y, median_bandwidth(y));
    Ok(frobenius_dot(&kx, &ky) / (n * n) as f64)
}

fn frobenius_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Permutation test of independence. Bandwidths are computed once on the
/// unpermuted data and frozen across permutations so the null stays
/// exchangeable; each permutation draws its shuffle from a sub-seed derived
/// from `(seed, permutation index)`, so results do not depend on evaluation
/// order.
pub fn hsic_test(
    x: &[f64],
    y: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<HsicResult, DependenceError> {
    let n = check_inputs(x, y)?;
    if n_permutations < 99 {
        return Err(DependenceError::TooFewPermutations(n_permutations));
    }
    let kx = centered_gram(x, median_bandwidth(x));
    let ky = centered_gram(y, median_bandwidth(y));
    let n2 = (n * n) as f64;
    let observed = frobenius_dot(&kx, &ky) / n2;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut exceed = 0usize;
    for p in 0..n_permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, p as u64));
        indices.shuffle(&mut rng);
        // Permuting y conjugates its centered Gram by the permutation.
        let mut stat = 0.0;
        for i in 0..n {
            let pi = indices[i] * n;
            let row = &kx[i * n..(i + 1) * n];
            for (j, &kxv) in row.iter().enumerate() {
                stat += kxv * ky[pi + indices[j]];
            }
        }
        if stat / n2 >= observed {
            exceed += 1;
        }
    }
    Ok(HsicResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_permutations + 1) as f64,
        n_permutations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn std_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    #[test]
    fn constant_input_gives_zero() {
        let x = vec![2.0; 50];
        let y: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert!(hsic(&x, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identical_samples_exceed_their_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = std_normal(500, &mut rng);
        let r = hsic_test(&x, &x, 199, 3).unwrap();
        // Below the 1st percentile of the null, i.e. above its 99th percentile.
        assert!(r.p_value <= 0.01, "p = {}", r.p_value);
    }

    #[test]
    fn independent_samples_stay_below_null_tail() {
        let mut below = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = std_normal(500, &mut rng);
            let y = std_normal(500, &mut rng);
            let r = hsic_test(&x, &y, 99, seed).unwrap();
            if r.p_value > 0.05 {
                below += 1;
            }
        }
        assert!(below >= 90, "only {below}/100 stayed below the 95th percentile");
    }

    #[test]
    fn cubic_dependence_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = std_normal(300, &mut rng);
        let noise = std_normal(300, &mut rng);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a.powi(3) + 0.1 * e).collect();
        let r = hsic_test(&x, &y, 499, 17).unwrap();
        assert!(r.p_value <= 0.01, "p = {}", r.p_value);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = std_normal(60, &mut rng);
        let y = std_normal(60, &mut rng);
        let a = hsic_test(&x, &y, 199, 99).unwrap();
        let b = hsic_test(&x, &y, 199, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            hsic(&x, &x[..3]),
            Err(DependenceError::LengthMismatch(4, 3))
        ));
        assert!(matches!(
            hsic(&x[..3], &x[..3]),
            Err(DependenceError::TooFewSamples { need: 4, got: 3 })
        ));
        assert!(matches!(
            hsic_test(&x, &x, 50, 0),
            Err(DependenceError::TooFewPermutations(50))
        ));
    }

    #[test]
    fn shared_permutation_leaves_statistic_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = std_normal(80, &mut rng);
        let y: Vec<f64> = x.iter().map(|v| v * v + 0.1).collect();
        let base = hsic(&x, &y).unwrap();
        let mut idx: Vec<usize> = (0..80).collect();
        idx.shuffle(&mut rng);
        let xp: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        assert!((hsic(&xp, &yp).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn scaling_x_barely_moves_the_p_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = std_normal(120, &mut rng);
        let noise = std_normal(120, &mut rng);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let xs: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let p1 = hsic_test(&x, &y, 199, 7).unwrap().p_value;
        let p2 = hsic_test(&xs, &y, 199, 7).unwrap().p_value;
        assert!((p1 - p2).abs() <= 0.1, "p1 = {p1}, p2 = {p2}");
    }

    #[test]
    fn power_is_monotone_in_noise_scale() {
        let mut rates = Vec::new();
        for &sigma in &[0.1, 1.0, 10.0] {
            let mut rejections = 0;
            for trial in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(40_000 + trial);
                let x = std_normal(100, &mut rng);
                let noise = std_normal(100, &mut rng);
                let y: Vec<f64> =
                    x.iter().zip(&noise).map(|(a, e)| a + sigma * e).collect();
                if hsic_test(&x, &y, 99, trial).unwrap().p_value <= 0.05 {
                    rejections += 1;
                }
            }
            rates.push(rejections);
        }
        assert!(
            rates[0] >= rates[1] && rates[1] >= rates[2],
            "rates not monotone: {rates:?}"
        );
    }
}
