//! Mann-Whitney U test and small descriptive helpers.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample {0} is empty")]
    Empty(&'static str),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("exact test requires untied data")]
    Ties,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `R_a - n_a (n_a + 1) / 2`: pairs where `a` wins, ties count half.
    pub u_a: f64,
    pub u_b: f64,
    pub z: f64,
    /// Two-sided p from the normal approximation with continuity and tie
    /// corrections.
    pub p: f64,
}

/// Midranks (1-based) of `values`, plus the tie term `sum(t^3 - t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.is_empty() {
        return Err(StatsError::Empty("a"));
    }
    if b.is_empty() {
        return Err(StatsError::Empty("b"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, b)?;
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let r_a: f64 = ranks[..a.len()].iter().sum();
    let u_a = r_a - n1 * (n1 + 1.0) / 2.0;
    let u_b = n1 * n2 - u_a;

    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let (z, p) = if var > 0.0 {
        let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (z, erfc(z / std::f64::consts::SQRT_2).min(1.0))
    } else {
        (0.0, 1.0)
    };
    Ok(MannWhitney { u_a, u_b, z, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMannWhitney {
    pub u_a: f64,
    /// `P(U <= u_a)` under the null.
    pub p_less: f64,
    /// `P(U >= u_a)` under the null.
    pub p_greater: f64,
    /// `P(|U - mean| >= |u_a - mean|)`.
    pub p_two_sided: f64,
}

/// Null distribution of `U` for sample sizes `(m, n)` as counts over
/// `u = 0..=m*n`, via the recurrence `f(m,n,u) = f(m-1,n,u-n) + f(m,n-1,u)`.
pub fn u_null_counts(m: usize, n: usize) -> Vec<f64> {
    // table[j][u] holds f(i, j, u) for the current i.
    let max_u = m * n;
    let mut table: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut row = vec![0.0; max_u + 1];
            row[0] = 1.0;
            row
        })
        .collect();
    for i in 1..=m {
        let mut next: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
        next[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                let from_a = if u >= j { table[j][u - j] } else { 0.0 };
                next[j][u] = from_a + next[j - 1][u];
            }
        }
        table = next;
    }
    table.swap_remove(n)
}

/// Exact permutation test for untied samples.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<ExactMannWhitney, StatsError> {
    check(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (_, tie_term) = midranks(&pooled);
    if tie_term != 0.0 {
        return Err(StatsError::Ties);
    }
    let u_a = mann_whitney_u(a, b)?.u_a;
    let counts = u_null_counts(a.len(), b.len());
    let total: f64 = counts.iter().sum();
    let u = u_a.round() as usize;
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let dev = (u_a - mean).abs();
    let p_less = counts[..=u].iter().sum::<f64>() / total;
    let p_greater = counts[u..].iter().sum::<f64>() / total;
    let p_two_sided = counts
        .iter()
        .enumerate()
        .filter(|(k, _)| (*k as f64 - mean).abs() >= dev - 1e-9)
        .map(|(_, c)| c)
        .sum::<f64>()
        / total;
    Ok(ExactMannWhitney {
        u_a,
        p_less,
        p_greater,
        p_two_sided,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Five-number summary `(min, q1, median, q3, max)`, linear interpolation.
pub fn five_numbers(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| crate::spike_pipeline::percentile(&v, p).unwrap_or(f64::NAN);
    [q(0.0), q(25.0), q(50.0), q(75.0), q(100.0)]
}
