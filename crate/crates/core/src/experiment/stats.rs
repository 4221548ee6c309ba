//! Mann–Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::ExperimentError;

/// Products `|a| * |b|` up to this size get an exact null distribution.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample: pairs `(x, y)` with `x > y`, ties
    /// counting one half.
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `a ++ b`, the rank sum of `a` and the tie-group sizes.
fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, f64, Vec<usize>) {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&x| (x, true))
        .chain(b.iter().map(|&y| (y, false)))
        .collect();
    pooled.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut ranks = Vec::with_capacity(pooled.len());
    let mut rank_sum_a = 0.0;
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for item in &pooled[i..=j] {
            ranks.push(r);
            if item.1 {
                rank_sum_a += r;
            }
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, rank_sum_a, ties)
}

fn check(a: &[f64], b: &[f64]) -> Result<(), ExperimentError> {
    if a.is_empty() || b.is_empty() {
        return Err(ExperimentError::EmptySample);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(ExperimentError::NanSample);
    }
    Ok(())
}

fn u_statistics(a: &[f64], rank_sum_a: f64, n_b: usize) -> (f64, f64) {
    let na = a.len() as f64;
    let u_a = rank_sum_a - na * (na + 1.0) / 2.0;
    (u_a, na * n_b as f64 - u_a)
}

/// Two-sided p-value from the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> Result<f64, ExperimentError> {
    check(a, b)?;
    let (_, rank_sum_a, ties) = midranks(a, b);
    let (u_a, _) = u_statistics(a, rank_sum_a, b.len());
    Ok(normal_p(u_a, a.len(), b.len(), &ties))
}

fn normal_p(u_a: f64, na: usize, nb: usize, ties: &[usize]) -> f64 {
    let n = (na + nb) as f64;
    let prod = (na * nb) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = if n > 1.0 {
        prod / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u_a - prod / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided p-value from the permutation distribution of the rank sum:
/// the probability, over all equally likely splits of the pooled midranks,
/// of a U at least as far from its mean as the observed one.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> Result<f64, ExperimentError> {
    check(a, b)?;
    let (ranks, rank_sum_a, _) = midranks(a, b);
    Ok(exact_p(&ranks, rank_sum_a, a.len()))
}

fn exact_p(ranks: &[f64], rank_sum_a: f64, na: usize) -> f64 {
    let n = ranks.len();
    // midranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // choose the smaller group; |U - mean| is symmetric in which side is picked
    let m = na.min(n - na);
    let observed = (2.0 * rank_sum_a).round() as i64;
    let observed = if m == na { observed } else { total as i64 - observed };

    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0u128; total + 1]; m + 1];
    ways[0][0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for j in (1..=m).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let (prev, cur) = (&lower[j - 1], &mut upper[0]);
            for s in (r..=reach.min(total)).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // the mean doubled rank sum of m items is m * total / n; compare
    // |s - mean| scaled by n to stay in integers
    let scaled = |s: i64| (n as i64 * s - m as i64 * total as i64).abs();
    let threshold = scaled(observed);
    let row = &ways[m];
    let mut extreme = 0u128;
    let mut all = 0u128;
    for (s, &w) in row.iter().enumerate() {
        if w == 0 {
            continue;
        }
        all += w;
        if scaled(s as i64) >= threshold {
            extreme += w;
        }
    }
    (extreme as f64 / all as f64).min(1.0)
}

/// U statistics and two-sided p; exact when `|a| * |b| <= 400`, otherwise
/// the normal approximation.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, ExperimentError> {
    check(a, b)?;
    let (ranks, rank_sum_a, ties) = midranks(a, b);
    let (u_a, u_b) = u_statistics(a, rank_sum_a, b.len());
    let exact = a.len() * b.len() <= EXACT_LIMIT;
    let p = if exact {
        exact_p(&ranks, rank_sum_a, a.len())
    } else {
        normal_p(u_a, a.len(), b.len(), &ties)
    };
    Ok(MannWhitney { u_a, u_b, p, exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over every subset of pooled positions.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let (ranks, rank_sum_a, _) = midranks(a, b);
        let n = ranks.len();
        let na = a.len();
        let mean = na as f64 * (n as f64 + 1.0) / 2.0;
        let obs = (rank_sum_a - mean).abs();
        let (mut hit, mut all) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            all += 1;
            if (s - mean).abs() >= obs - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / all as f64
    }

    #[test]
    fn disjoint_three_by_three() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!((r.u_a, r.u_b), (0.0, 9.0));
        assert!(r.exact);
        assert!((r.p - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u_a, 12.5);
        assert!((r.p - 1.0).abs() < 1e-12);
        assert!((mann_whitney_normal_p(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_tied() {
        let r = mann_whitney_u(&[2.0; 4], &[2.0; 3]).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(mann_whitney_normal_p(&[2.0; 4], &[2.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(mann_whitney_u(&[], &[1.0]), Err(ExperimentError::EmptySample)));
    }

    #[test]
    fn exact_matches_brute_force_with_ties() {
        let cases: [(&[f64], &[f64]); 5] = [
            (&[1.0, 2.0, 2.0, 5.0], &[2.0, 3.0, 7.0]),
            (&[0.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 4.0]),
            (&[5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            (&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], &[2.0, 3.0, 4.0, 4.0, 1.0, 9.0]),
            (&[10.0, 20.0, 30.0, 40.0, 50.0], &[0.0, 0.0, 0.0, 0.0, 0.0]),
        ];
        for (a, b) in cases {
            let got = mann_whitney_exact_p(a, b).unwrap();
            assert!((got - enumerate_p(a, b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn large_samples_use_normal() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (10..40).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert_eq!(r.p, mann_whitney_normal_p(&a, &b).unwrap());
        assert!(r.p < 0.05);
    }

    #[test]
    fn detects_one_sigma_shift() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let draw = |rng: &mut ChaCha8Rng| -(1.0 - rng.random::<f64>()).ln();
        let hits = (0..100u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a: Vec<f64> = (0..50).map(|_| draw(&mut rng)).collect();
                let b: Vec<f64> = (0..50).map(|_| draw(&mut rng) + 1.0).collect();
                mann_whitney_u(&a, &b).unwrap().p < 0.05
            })
            .count();
        assert!(hits >= 90, "{hits}/100");
    }

    #[test]
    fn exact_and_normal_agree_for_moderate_sizes() {
        let a: Vec<f64> = (0..15).map(|i| f64::from(i * 3 % 17)).collect();
        let b: Vec<f64> = (0..18).map(|i| f64::from(i * 5 % 23) + 2.0).collect();
        let e = mann_whitney_exact_p(&a, &b).unwrap();
        let n = mann_whitney_normal_p(&a, &b).unwrap();
        assert!((e - n).abs() < 0.02, "{e} vs {n}");
    }
}
