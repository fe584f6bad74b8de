//! Paired significance tests: Student's t on differences and the Wilcoxon
//! signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("need at least {need} usable pairs, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("degenerate sample")]
    Degenerate,
    #[error("non-finite sample value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TestName {
    PairedT,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test: TestName,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Length(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Two-sided one-sample t test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(StatsError::Degenerate);
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(StatResult {
        test: TestName::PairedT,
        statistic: t,
        p_value: p,
        n,
    })
}

/// Largest sample size handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Ranks of `|d|` with ties averaged, doubled so they stay integral.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 average to (i + j + 2) / 2.
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are dropped and tied magnitudes share their average
/// rank. The statistic is the smaller of the positive and negative rank
/// sums. Up to [`WILCOXON_EXACT_MAX`] pairs the p-value is exact over all
/// sign assignments; above that it uses the tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    let d: Vec<f64> = differences(a, b)?.into_iter().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::Degenerate);
    }
    let n = d.len();
    if n < 5 {
        return Err(StatsError::TooFew { need: 5, got: n });
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks.iter().zip(&d).filter(|(_, &x)| x > 0.0).map(|(r, _)| r).sum();
    let w2 = plus.min(total - plus);
    let statistic = w2 as f64 / 2.0;
    let p = if n <= WILCOXON_EXACT_MAX {
        exact_lower_tail(&ranks, w2) * 2.0
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        if var <= 0.0 {
            1.0
        } else {
            let diff = statistic - mean;
            let corrected = if diff == 0.0 { 0.0 } else { diff - 0.5 * diff.signum() };
            let z = corrected / var.sqrt();
            2.0 * Normal::standard().cdf(-z.abs())
        }
    };
    Ok(StatResult {
        test: TestName::WilcoxonSignedRank,
        statistic,
        p_value: p.min(1.0),
        n,
    })
}

/// `P(W+ <= w2 / 2)` under random signs, by counting rank-sum subsets.
fn exact_lower_tail(doubled: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled.len() as i32);
    counts[..=w2 as usize].iter().sum::<f64>() / all
}
