//! Shared generators for the integration tests.
#![allow(dead_code)] // not every test binary uses every generator

use mrpcg::estimate::{JumpDistribution, TransitionSeries};
use mrpcg::traj::FiniteChainSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random chain with strictly positive rows (so every macrostate restriction
/// is irreducible) and a labeling surjective onto `1..=n_macro`.
pub fn random_chain(n_micro: usize, n_macro: usize, seed: u64) -> FiniteChainSpec {
    assert!(n_macro <= n_micro);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::<f64>::zeros(n_micro, n_micro);
    for i in 0..n_micro {
        let mut row: Vec<f64> = (0..n_micro).map(|_| rng.gen::<f64>() + 0.02).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        for j in 0..n_micro {
            m[(i, j)] = row[j];
        }
    }
    // First n_macro microstates pin surjectivity; the rest are random.
    let labels: Vec<usize> = (0..n_micro)
        .map(|x| {
            if x < n_macro {
                x + 1
            } else {
                rng.gen_range(1..=n_macro)
            }
        })
        .collect();
    FiniteChainSpec::new(m, labels).unwrap()
}

pub fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        for j in 0..n {
            m[(i, j)] = row[j];
        }
    }
    m
}

/// Random transition series: identity at lag 0, independent random
/// stochastic matrices after (not renewal-consistent; fine for algebraic
/// properties of the fit).
pub fn random_series(n: usize, n_lags: usize, seed: u64) -> TransitionSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrices = vec![DMatrix::<f64>::identity(n, n)];
    for _ in 1..=n_lags {
        matrices.push(random_stochastic(n, &mut rng));
    }
    let counts = vec![vec![1; n]; n_lags + 1];
    TransitionSeries {
        tau: 1.0,
        matrices,
        counts,
    }
}

/// Random fully supported jump distribution over lags `1..=n_trunc`.
pub fn random_jump_distribution(n: usize, n_trunc: usize, seed: u64) -> JumpDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jd = JumpDistribution::zeros(1.0, n, n_trunc);
    for i in 1..=n {
        let mut weights = Vec::new();
        for j in 1..=n {
            for l in 1..=n_trunc {
                if i != j {
                    weights.push((j, l, rng.gen::<f64>() + 0.01));
                }
            }
        }
        let total: f64 = weights.iter().map(|w| w.2).sum();
        for (j, l, w) in weights {
            jd.set_mass(i, j, l, w / total);
        }
    }
    jd
}
