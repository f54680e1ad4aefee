//! Two-sample and goodness-of-fit statistics.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Result of an energy-distance permutation test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoSampleReport {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl TwoSampleReport {
    /// Non-rejection at level `alpha`.
    pub fn accepts(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `nm/(n+m) (2 C/(nm) - W_a/n² - W_b/m²)` from the three distance sums.
fn energy_from_sums(cross: f64, wa: f64, wb: f64, n: f64, m: f64) -> f64 {
    n * m / (n + m) * (2.0 * cross / (n * m) - wa / (n * n) - wb / (m * m))
}

/// Energy-distance statistic between two samples of points in `R^dim`
/// (row-major), by direct summation.
pub fn energy_statistic(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let n = a.len() / dim;
    let m = b.len() / dim;
    let sum = |p: &[f64], q: &[f64]| -> f64 {
        p.chunks(dim)
            .map(|x| q.chunks(dim).map(|y| dist(x, y)).sum::<f64>())
            .sum()
    };
    energy_from_sums(sum(a, b), sum(a, a), sum(b, b), n as f64, m as f64)
}

/// Energy-distance test with `permutations` random relabelings.
///
/// The permutation statistics are evaluated together: distance rows are
/// formed in blocks and multiplied against the 0/1 label matrix of all
/// relabelings, so every pair distance is computed once.
pub fn energy_distance_test(
    a: &[f64],
    b: &[f64],
    dim: usize,
    permutations: usize,
    seed: u64,
) -> Result<TwoSampleReport> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) || a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "samples must be non-empty rows of width dim".into(),
        ));
    }
    let n = a.len() / dim;
    let m = b.len() / dim;
    let total = n + m;
    let observed = energy_statistic(a, b, dim);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    let mut labels = DMatrix::<f64>::zeros(total, permutations);
    for p in 0..permutations {
        idx.shuffle(&mut rng);
        for &i in &idx[..n] {
            labels[(i, p)] = 1.0;
        }
    }

    let mut row_sums = vec![0.0; total];
    let mut s = DMatrix::<f64>::zeros(total, permutations);
    let block = 256;
    let mut start = 0;
    while start < total {
        let rows = block.min(total - start);
        let dblock = DMatrix::from_fn(rows, total, |r, c| {
            dist(
                &pooled[(start + r) * dim..(start + r + 1) * dim],
                &pooled[c * dim..(c + 1) * dim],
            )
        });
        for r in 0..rows {
            row_sums[start + r] = dblock.row(r).sum();
        }
        let prod = &dblock * &labels;
        s.rows_mut(start, rows).copy_from(&prod);
        start += rows;
    }

    let mut exceed = 0usize;
    for p in 0..permutations {
        let (mut wa, mut wb, mut cross) = (0.0, 0.0, 0.0);
        for i in 0..total {
            let l = labels[(i, p)];
            let si = s[(i, p)];
            let rest = row_sums[i] - si;
            if l == 1.0 {
                wa += si;
                cross += rest;
            } else {
                wb += rest;
            }
        }
        let stat = energy_from_sums(cross, wa, wb, n as f64, m as f64);
        if stat >= observed {
            exceed += 1;
        }
    }
    Ok(TwoSampleReport {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
        n_a: n,
        n_b: m,
    })
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Median (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect()
    }

    #[test]
    fn identical_samples_give_zero() {
        let a = normals(1, 200, 0.0);
        assert_eq!(energy_statistic(&a, &a, 2), 0.0);
        let r = energy_distance_test(&a, &a, 2, 50, 3).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn blocked_statistics_match_direct_sums() {
        // Oracle: recompute one relabeled statistic by direct loops.
        let a = normals(5, 300, 0.0);
        let b = normals(6, 260, 0.1);
        let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut idx: Vec<usize> = (0..280).collect();
        idx.shuffle(&mut rng);
        let mut mask = vec![false; 280];
        for &i in &idx[..150] {
            mask[i] = true;
        }
        let pick = |want: bool| -> Vec<f64> {
            (0..280)
                .filter(|&i| mask[i] == want)
                .flat_map(|i| pooled[2 * i..2 * i + 2].to_vec())
                .collect()
        };
        let direct = energy_statistic(&pick(true), &pick(false), 2);
        let r = energy_distance_test(&a, &b, 2, 1, 9).unwrap();
        // With one relabeling the p-value is 1 iff that statistic >= observed.
        let observed = energy_statistic(&a, &b, 2);
        assert_eq!(r.p_value == 1.0, direct >= observed - 1e-9);
    }

    #[test]
    fn detects_shift_and_accepts_equal_laws() {
        let a = normals(11, 800, 0.0);
        let b = normals(12, 800, 0.0);
        let c = normals(13, 800, 0.6);
        assert!(energy_distance_test(&a, &b, 2, 200, 1).unwrap().p_value > 0.01);
        assert!(energy_distance_test(&a, &c, 2, 200, 1).unwrap().p_value < 0.01);
    }

    #[test]
    fn ks_against_uniform() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&xs, |x| x.clamp(0.0, 1.0)) <= 0.0005 + 1e-12);
        assert!(ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0)) > 0.2);
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.9), 9.0);
        assert!((variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }
}
