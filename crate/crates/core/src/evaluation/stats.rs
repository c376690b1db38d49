//! Two-sided rank tests with exact null distributions for small samples.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{data_err, Result};

/// Largest number of non-zero differences for the exact signed-rank test.
pub const WILCOXON_EXACT_MAX: usize = 25;
/// Largest pooled sample size for the exact rank-sum test.
pub const MANN_WHITNEY_EXACT_MAX: usize = 16;

/// Midranks (1-based) of `v` and the tie-group sizes.
pub fn midranks(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn two_sided(lower: f64, upper: f64) -> f64 {
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.cdf(-z.abs())).min(1.0)
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return data_err("rank test inputs must be finite");
    }
    Ok(())
}

/// Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped; if none remain the p-value is 1.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return data_err("wilcoxon needs non-empty paired samples");
    }
    check_finite(x)?;
    check_finite(y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(1.0);
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    if n <= WILCOXON_EXACT_MAX {
        // Doubled midranks are integers; count sign assignments per sum.
        let weights: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = weights.iter().sum();
        let mut ways = vec![0f64; total + 1];
        ways[0] = 1.0;
        for &w in &weights {
            for s in (w..=total).rev() {
                ways[s] += ways[s - w];
            }
        }
        let all = 2f64.powi(n as i32);
        let obs = (2.0 * w_plus).round() as usize;
        let lower: f64 = ways[..=obs].iter().sum::<f64>() / all;
        let upper: f64 = ways[obs..].iter().sum::<f64>() / all;
        return Ok(two_sided(lower, upper));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie;
    if var <= 0.0 {
        return Ok(1.0);
    }
    Ok(normal_p((w_plus - mean) / var.sqrt()))
}

/// Mann–Whitney U test on independent samples.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return data_err("mann_whitney_u needs two non-empty samples");
    }
    check_finite(x)?;
    check_finite(y)?;
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let n = n1 + n2;
    if n <= MANN_WHITNEY_EXACT_MAX {
        // ways[k][s]: subsets of k pooled items with doubled rank sum s.
        let weights: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = weights.iter().sum();
        let mut ways = vec![vec![0f64; total + 1]; n1 + 1];
        ways[0][0] = 1.0;
        for &w in &weights {
            for k in (1..=n1).rev() {
                for s in (w..=total).rev() {
                    let add = ways[k - 1][s - w];
                    ways[k][s] += add;
                }
            }
        }
        let all: f64 = ways[n1].iter().sum();
        let obs = (2.0 * r1).round() as usize;
        let lower = ways[n1][..=obs].iter().sum::<f64>() / all;
        let upper = ways[n1][obs..].iter().sum::<f64>() / all;
        return Ok(two_sided(lower, upper));
    }
    let (a, b, nf) = (n1 as f64, n2 as f64, n as f64);
    let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = a * b / 12.0 * ((nf + 1.0) - tie / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    Ok(normal_p((u - a * b / 2.0) / var.sqrt()))
}
