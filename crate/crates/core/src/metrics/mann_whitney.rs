//! Two-sided Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::MetricsError;

/// Largest smaller-sample size accepted in exact mode.
pub const EXACT_MAX_SMALLER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwMode {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// U statistic of the first sample: pairs where x beats y, ties count half.
    pub u: f64,
    pub p: f64,
}

/// Midranks of the pooled sample, plus the tie-group sizes.
fn pooled_ranks(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = x.iter().chain(y).copied().zip(0..).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        for entry in &pooled[i..j] {
            ranks[entry.1] = midrank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let (ranks, _) = pooled_ranks(x, y);
    let n = x.len() as f64;
    ranks[..x.len()].iter().sum::<f64>() - n * (n + 1.0) / 2.0
}

/// Counts of rank arrangements yielding each U in `0..=n*m`, for untied samples.
fn u_distribution(n: usize, m: usize) -> Vec<f64> {
    // The null distribution is symmetric in the sample sizes, so recurse over
    // the smaller one: f(a, b, u) = f(a-1, b, u-b) + f(a, b-1, u), sweeping b
    // upward and keeping one layer per value of a.
    let (small, large) = (n.min(m), n.max(m));
    let max_u = small * large;
    // prev[a][u] holds f(a, b-1, u)
    let mut prev = vec![vec![0.0f64; max_u + 1]; small + 1];
    for row in prev.iter_mut() {
        // no y-values: U = 0 for any number of x-values
        row[0] = 1.0;
    }
    for b in 1..=large {
        let mut cur = vec![vec![0.0f64; max_u + 1]; small + 1];
        cur[0][0] = 1.0;
        for a in 1..=small {
            for u in 0..=a * b {
                let x_last = if u >= b { cur[a - 1][u - b] } else { 0.0 };
                cur[a][u] = x_last + prev[a][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(small)
}

pub fn mann_whitney(x: &[f64], y: &[f64], mode: MwMode) -> Result<MannWhitneyResult, MetricsError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::Degenerate("non-finite sample value".into()));
    }
    let (n, m) = (x.len(), y.len());
    let (ranks, ties) = pooled_ranks(x, y);
    let nf = n as f64;
    let mf = m as f64;
    let u = ranks[..n].iter().sum::<f64>() - nf * (nf + 1.0) / 2.0;

    let p = match mode {
        MwMode::Exact => {
            if !ties.is_empty() {
                return Err(MetricsError::TiesInExactMode);
            }
            if n.min(m) > EXACT_MAX_SMALLER {
                return Err(MetricsError::TooLargeForExact {
                    smaller: n.min(m),
                    limit: EXACT_MAX_SMALLER,
                });
            }
            let counts = u_distribution(n, m);
            let total: f64 = counts.iter().sum();
            let u_int = u.round() as usize;
            let lower: f64 = counts[..=u_int].iter().sum::<f64>() / total;
            let upper: f64 = counts[u_int..].iter().sum::<f64>() / total;
            (2.0 * lower.min(upper)).min(1.0)
        }
        MwMode::NormalApprox => {
            let big_n = nf + mf;
            let tie_term: f64 = ties
                .iter()
                .map(|t| {
                    let t = *t as f64;
                    t * t * t - t
                })
                .sum::<f64>()
                / (big_n * (big_n - 1.0));
            let variance = nf * mf / 12.0 * ((big_n + 1.0) - tie_term);
            if variance <= 0.0 {
                1.0
            } else {
                let z = ((u - nf * mf / 2.0).abs() - 0.5) / variance.sqrt();
                erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
            }
        }
    };
    Ok(MannWhitneyResult { u, p })
}
