//! Sample-set distances used in place of image metrics.

use rand_distr::{Distribution, StandardNormal};

use crate::par;
use crate::rng::rng_for;

/// Random directions used by [`sliced_wasserstein`].
pub const SW_PROJECTIONS: usize = 64;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let rows = par::map_slice(a, |x| b.iter().map(|y| dist(x, y)).sum::<f64>());
    rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// `2·E‖a−b‖ − E‖a−a′‖ − E‖b−b′‖` over all pairs (V-statistic).
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let ed = 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
    // Rounding can leave a tiny negative value for identical sets.
    ed.max(0.0)
}

/// Squared 1-D Wasserstein-2 distance between two empirical distributions,
/// integrating the difference of their quantile functions.
fn w2_squared_1d(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0f64;
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        acc += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    acc
}

/// Sliced Wasserstein-2 over [`SW_PROJECTIONS`] seeded random directions.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let dim = a[0].len();
    let directions: Vec<Vec<f64>> = (0..SW_PROJECTIONS)
        .map(|p| {
            let mut rng = rng_for(seed, "sliced-wasserstein", p as u64);
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let project = |set: &[Vec<f64>], d: &[f64]| -> Vec<f64> {
        set.iter().map(|x| x.iter().zip(d).map(|(a, b)| a * b).sum()).collect()
    };
    let per = par::map_slice(&directions, |d| w2_squared_1d(project(a, d), project(b, d)));
    (per.iter().sum::<f64>() / SW_PROJECTIONS as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut ab = 0.0;
        for x in a {
            for y in b {
                ab += dist(x, y);
            }
        }
        let mut aa = 0.0;
        for x in a {
            for y in a {
                aa += dist(x, y);
            }
        }
        let mut bb = 0.0;
        for x in b {
            for y in b {
                bb += dist(x, y);
            }
        }
        let (n, m) = (a.len() as f64, b.len() as f64);
        2.0 * ab / (n * m) - aa / (n * n) - bb / (m * m)
    }

    #[test]
    fn energy_distance_examples() {
        assert_eq!(energy_distance(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]), 10.0);
        let a = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 0.0]];
        let mut shuffled = a.clone();
        shuffled.rotate_left(1);
        assert_eq!(energy_distance(&a, &shuffled), 0.0);
        assert_eq!(sliced_wasserstein(&a, &shuffled, 3), 0.0);
    }

    #[test]
    fn one_dimensional_wasserstein_by_hand() {
        // Shift by 1: every quantile moves by 1.
        assert!((w2_squared_1d(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        // Unequal sizes: {0, 2} against {1}: (1/2)·1 + (1/2)·1.
        assert!((w2_squared_1d(vec![0.0, 2.0], vec![1.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn energy_distance_matches_double_loop(
            a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..12),
            b in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..12),
        ) {
            let ed = energy_distance(&a, &b);
            prop_assert!((ed - oracle(&a, &b).max(0.0)).abs() <= 1e-10);
            prop_assert!(ed >= 0.0);
            prop_assert!((ed - energy_distance(&b, &a)).abs() <= 1e-10);
            prop_assert!(sliced_wasserstein(&a, &b, 1) >= 0.0);
        }
    }
}
