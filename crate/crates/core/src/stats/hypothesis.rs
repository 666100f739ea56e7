//! Paired and repeated-measures significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom, possibly fractional; empty when not applicable.
    pub df: Vec<f64>,
    pub p_value: f64,
    pub effect_size: Option<f64>,
    /// How the statistic, p-value and effect size were obtained.
    pub method: String,
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    let d = ChiSquared::new(df).expect("positive df");
    clamp_p(d.sf(x))
}

/// Discordant counts `(b, c)`: `b` pairs where only the first method fires.
pub fn discordant(pairs: &[(bool, bool)]) -> (usize, usize) {
    pairs.iter().fold((0, 0), |(b, c), &(x, y)| match (x, y) {
        (true, false) => (b + 1, c),
        (false, true) => (b, c + 1),
        _ => (b, c),
    })
}

/// McNemar's test on counts of discordant pairs.
pub fn mcnemar_counts(b: usize, c: usize, continuity: bool) -> Result<TestResult> {
    if b + c == 0 {
        return Err(Error::Undefined("McNemar statistic needs at least one discordant pair".into()));
    }
    let k = if continuity { 1.0 } else { 0.0 };
    let diff = (b as f64 - c as f64).abs();
    let stat = (diff - k).max(0.0).powi(2) / (b + c) as f64;
    Ok(TestResult {
        statistic: stat,
        df: vec![1.0],
        p_value: chi2_sf(stat, 1.0),
        effect_size: None,
        method: if continuity {
            "McNemar chi-square with continuity correction".into()
        } else {
            "McNemar chi-square".into()
        },
    })
}

pub fn mcnemar(pairs: &[(bool, bool)], continuity: bool) -> Result<TestResult> {
    let (b, c) = discordant(pairs);
    mcnemar_counts(b, c, continuity)
}

/// Above this many non-zero differences the normal approximation is used.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Midranks of `|d|`, doubled so ties stay integral.
fn doubled_midranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled midrank is their sum of endpoints
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Exact P(T+ <= w2/2) under the null, for doubled ranks.
fn exact_lower_tail(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: f64 = counts[..=(w2 as usize).min(total as usize)].iter().sum();
    hits / 2f64.powi(ranks2.len() as i32)
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and ties receive midranks. The statistic is
/// the smaller of the positive and negative rank sums. The two-sided p-value
/// is multiplied by `bonferroni` and capped at 1.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], bonferroni: f64) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::input("paired samples differ in length"));
    }
    if !(bonferroni >= 1.0) {
        return Err(Error::input("Bonferroni factor must be at least 1"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite paired difference"));
    }
    let n = d.len();
    if n == 0 {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks2, ties) = doubled_midranks(&abs);
    let pos2: u64 = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w2 = pos2.min(total2 - pos2);
    let w = w2 as f64 / 2.0;

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = if var > 0.0 { (w - mean) / var.sqrt() } else { 0.0 };

    let (raw_p, method) = if n <= WILCOXON_EXACT_MAX {
        (2.0 * exact_lower_tail(&ranks2, w2), "exact")
    } else {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.cdf(z), "normal approximation with tie correction")
    };
    Ok(TestResult {
        statistic: w,
        df: Vec::new(),
        p_value: clamp_p(raw_p.min(1.0) * bonferroni),
        effect_size: Some(z.abs() / nf.sqrt()),
        method: format!("Wilcoxon signed-rank, {method}, n={n}, Bonferroni x{bonferroni}"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmAnovaResult {
    pub test: TestResult,
    /// Greenhouse-Geisser sphericity estimate.
    pub epsilon: f64,
    pub subjects: usize,
    /// Subjects removed for a missing cell.
    pub dropped: usize,
    pub ss_conditions: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
}

/// One-way repeated-measures ANOVA, rows are subjects and columns levels.
///
/// Degrees of freedom are Greenhouse-Geisser corrected. The effect size is
/// generalized eta squared for a single measured within-subject factor.
pub fn rm_anova(rows: &[Vec<Option<f64>>]) -> Result<RmAnovaResult> {
    let k = rows.first().map_or(0, |r| r.len());
    if k < 2 {
        return Err(Error::input("need at least two within-subject levels"));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::input("ragged score matrix"));
    }
    let complete: Vec<Vec<f64>> = rows
        .iter()
        .filter_map(|r| r.iter().copied().collect::<Option<Vec<f64>>>())
        .collect();
    if complete.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite score"));
    }
    let n = complete.len();
    let dropped = rows.len() - n;
    if n < 2 {
        return Err(Error::Undefined("fewer than two complete subjects".into()));
    }
    let nf = n as f64;
    let kf = k as f64;
    let grand = complete.iter().flatten().sum::<f64>() / (nf * kf);
    let col_means: Vec<f64> = (0..k)
        .map(|j| complete.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let row_means: Vec<f64> = complete.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let ss_total: f64 = complete.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_cond = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_subj = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_err = (ss_total - ss_cond - ss_subj).max(0.0);

    let epsilon = greenhouse_geisser(&complete, &col_means);
    let df1 = epsilon * (kf - 1.0);
    let df2 = epsilon * (kf - 1.0) * (nf - 1.0);
    let (f, p) = if ss_cond == 0.0 {
        (0.0, 1.0)
    } else if ss_err == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_cond / (kf - 1.0)) / (ss_err / ((kf - 1.0) * (nf - 1.0)));
        let dist = FisherSnedecor::new(df1, df2).expect("positive df");
        (f, clamp_p(dist.sf(f)))
    };
    let denom = ss_cond + ss_subj + ss_err;
    let eta = if denom > 0.0 { ss_cond / denom } else { 0.0 };
    Ok(RmAnovaResult {
        test: TestResult {
            statistic: f,
            df: vec![df1, df2],
            p_value: p,
            effect_size: Some(eta),
            method: "repeated-measures ANOVA, Greenhouse-Geisser df; generalized eta squared \
                     SS_cond / (SS_cond + SS_subjects + SS_error)"
                .into(),
        },
        epsilon,
        subjects: n,
        dropped,
        ss_conditions: ss_cond,
        ss_subjects: ss_subj,
        ss_error: ss_err,
    })
}

/// Box's epsilon from the double-centred sample covariance of the levels.
pub fn greenhouse_geisser(data: &[Vec<f64>], col_means: &[f64]) -> f64 {
    let k = col_means.len();
    if k == 2 {
        return 1.0;
    }
    let n = data.len() as f64;
    let mut s = vec![vec![0.0; k]; k];
    for r in data {
        for i in 0..k {
            for j in 0..k {
                s[i][j] += (r[i] - col_means[i]) * (r[j] - col_means[j]);
            }
        }
    }
    for row in s.iter_mut() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    let row_mean: Vec<f64> = s.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let all_mean = row_mean.iter().sum::<f64>() / k as f64;
    let mut trace = 0.0;
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = s[i][j] - row_mean[i] - row_mean[j] + all_mean;
            if i == j {
                trace += c;
            }
            sq += c * c;
        }
    }
    if sq == 0.0 {
        return 1.0;
    }
    let eps = trace * trace / ((k as f64 - 1.0) * sq);
    eps.clamp(1.0 / (k as f64 - 1.0), 1.0)
}
