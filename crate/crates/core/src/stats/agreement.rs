//! Inter-rater agreement.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Krippendorff's alpha for nominal labels.
///
/// `ratings[r][i]` is rater `r`'s label for item `i`, `None` when missing.
/// Items with fewer than two labels are not pairable and are ignored.
pub fn krippendorff_alpha<T: Ord + Clone>(ratings: &[Vec<Option<T>>]) -> Result<f64> {
    if ratings.len() < 2 {
        return Err(Error::input("need at least two raters"));
    }
    let items = ratings[0].len();
    if ratings.iter().any(|r| r.len() != items) {
        return Err(Error::input("raters disagree on the number of items"));
    }
    if items < 2 {
        return Err(Error::input("need at least two items"));
    }
    // coincidence matrix over value indices
    let mut index: BTreeMap<T, usize> = BTreeMap::new();
    for v in ratings.iter().flatten().flatten() {
        let next = index.len();
        index.entry(v.clone()).or_insert(next);
    }
    let q = index.len();
    let mut o = vec![vec![0.0f64; q]; q];
    for i in 0..items {
        let vals: Vec<usize> = ratings
            .iter()
            .filter_map(|r| r[i].as_ref())
            .map(|v| index[v])
            .collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for (a, &c) in vals.iter().enumerate() {
            for (b, &k) in vals.iter().enumerate() {
                if a != b {
                    o[c][k] += w;
                }
            }
        }
    }
    let nc: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    if n == 0.0 {
        return Err(Error::Undefined("no pairable values".into()));
    }
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..q {
        for k in 0..q {
            if c != k {
                observed += o[c][k];
                expected += nc[c] * nc[k];
            }
        }
    }
    if expected == 0.0 {
        return Err(Error::Undefined(
            "only one label value in use; alpha has no chance baseline".into(),
        ));
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
