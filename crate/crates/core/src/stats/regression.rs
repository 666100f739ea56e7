//! Least squares with absorbed group intercepts.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Long-format data: one row per observation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub groups: Vec<String>,
    pub response: Vec<f64>,
    /// Named predictor columns, each as long as `response`.
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.columns.push((name.into(), values));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeKind {
    #[default]
    Conventional,
    /// CR1 cluster-robust by group.
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub predictors: Vec<String>,
    /// Products of two predictors, named `a:b`.
    pub interactions: Vec<(String, String)>,
    /// Predictors rescaled to mean 0 and sample sd 1 before use.
    pub standardize: Vec<String>,
    /// Multiplier applied to the response; 0.5 maps a combined score onto [0, 1].
    pub response_scale: f64,
    pub fixed_effects: bool,
    pub se: SeKind,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            predictors: Vec::new(),
            interactions: Vec::new(),
            standardize: Vec::new(),
            response_scale: 1.0,
            fixed_effects: true,
            se: SeKind::Conventional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    /// Mean response minus mean predictors times slopes.
    pub intercept: f64,
    /// Share of total variance explained, fixed effects included.
    pub r_squared: f64,
    /// Share of within-group variance explained by the predictors.
    pub within_r_squared: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub dropped_singletons: usize,
    pub residual_df: usize,
    pub rss: f64,
    pub se: SeKind,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Mean 0, sample standard deviation 1.
pub fn standardize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    if v.len() < 2 {
        return Err(Error::input("need two values to standardize"));
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::input("cannot standardize a constant column"));
    }
    let z: Vec<f64> = v.iter().map(|x| (x - mean) / sd).collect();
    // one correction pass removes the rounding residue from the mean
    let m = z.iter().sum::<f64>() / n;
    Ok(z.into_iter().map(|x| x - m).collect())
}

fn group_ids(groups: &[String]) -> (Vec<usize>, usize) {
    let mut map: HashMap<&str, usize> = HashMap::new();
    let ids = groups
        .iter()
        .map(|g| {
            let next = map.len();
            *map.entry(g.as_str()).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn demean(v: &[f64], ids: &[usize], g: usize) -> Vec<f64> {
    let mut sum = vec![0.0; g];
    let mut cnt = vec![0usize; g];
    for (x, &i) in v.iter().zip(ids) {
        sum[i] += x;
        cnt[i] += 1;
    }
    v.iter()
        .zip(ids)
        .map(|(x, &i)| x - sum[i] / cnt[i] as f64)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const COLLINEAR_TOL: f64 = 1e-9;

/// First column whose within-group variation is spanned by the fixed
/// effects and the columns before it.
fn find_collinear(cols: &[Vec<f64>], raw: &[Vec<f64>], names: &[String]) -> Option<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for ((c, r), name) in cols.iter().zip(raw).zip(names) {
        let scale = dot(r, r).sqrt();
        let mut v = c.clone();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= COLLINEAR_TOL * scale.max(f64::MIN_POSITIVE) {
            return Some(name.clone());
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    None
}

/// Fixed-effects OLS via the within transformation.
///
/// Groups with one observation carry no within variation and are dropped.
/// Slopes equal those of OLS with one dummy per group. Conventional standard
/// errors use `N - G - K` residual degrees of freedom.
pub fn fixed_effects_ols(spec: &RegressionSpec, frame: &Frame) -> Result<RegressionResult> {
    let n_all = frame.len();
    if frame.groups.len() != n_all || frame.columns.iter().any(|(_, c)| c.len() != n_all) {
        return Err(Error::input("frame columns differ in length"));
    }
    if !(spec.response_scale.is_finite() && spec.response_scale != 0.0) {
        return Err(Error::input("response scale must be finite and non-zero"));
    }
    for s in &spec.standardize {
        if !spec.predictors.contains(s) {
            return Err(Error::input(format!("cannot standardize `{s}`: not a predictor")));
        }
    }

    let groups: Vec<String> = if spec.fixed_effects {
        frame.groups.clone()
    } else {
        vec![String::new(); n_all]
    };
    let (ids_all, g_all) = group_ids(&groups);
    let mut sizes = vec![0usize; g_all];
    ids_all.iter().for_each(|&i| sizes[i] += 1);
    let keep: Vec<usize> = (0..n_all).filter(|&r| sizes[ids_all[r]] >= 2).collect();
    let dropped_singletons = n_all - keep.len();
    let kept_groups: Vec<String> = keep.iter().map(|&r| groups[r].clone()).collect();
    let (ids, g) = group_ids(&kept_groups);
    let n = keep.len();

    let take = |v: &[f64]| -> Vec<f64> { keep.iter().map(|&r| v[r]).collect() };
    let y: Vec<f64> = take(&frame.response)
        .into_iter()
        .map(|v| v * spec.response_scale)
        .collect();

    let mut names = Vec::new();
    let mut raw: Vec<Vec<f64>> = Vec::new();
    for p in &spec.predictors {
        let col = frame
            .column(p)
            .ok_or_else(|| Error::input(format!("unknown predictor `{p}`")))?;
        let mut col = take(col);
        if spec.standardize.contains(p) {
            col = standardize(&col).map_err(|_| Error::Collinear { variable: p.clone() })?;
        }
        names.push(p.clone());
        raw.push(col);
    }
    for (a, b) in &spec.interactions {
        let ia = names.iter().position(|n| n == a);
        let ib = names.iter().position(|n| n == b);
        let (ia, ib) = match (ia, ib) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => return Err(Error::input(format!("interaction `{a}:{b}` uses an unknown predictor"))),
        };
        let col = raw[ia].iter().zip(&raw[ib]).map(|(x, z)| x * z).collect();
        raw.push(col);
        names.push(format!("{a}:{b}"));
    }
    if y.iter().chain(raw.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite value in regression data"));
    }
    let k = names.len();
    if n < g + k + 1 {
        return Err(Error::Undefined(format!(
            "{n} observations cannot identify {g} group effects and {k} slopes"
        )));
    }

    let yw = demean(&y, &ids, g);
    let xw: Vec<Vec<f64>> = raw.iter().map(|c| demean(c, &ids, g)).collect();
    if let Some(variable) = find_collinear(&xw, &raw, &names) {
        return Err(Error::Collinear { variable });
    }

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let tss_within = dot(&yw, &yw);
    let residual_df = n - g - k;

    let (beta, resid, xtx_inv) = if k == 0 {
        (DVector::zeros(0), DVector::from_vec(yw.clone()), DMatrix::zeros(0, 0))
    } else {
        let x = DMatrix::from_fn(n, k, |r, c| xw[c][r]);
        let yv = DVector::from_vec(yw.clone());
        let qr = x.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let beta = r
            .solve_upper_triangular(&(q.transpose() * &yv))
            .ok_or_else(|| Error::Undefined("singular design".into()))?;
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| Error::Undefined("singular design".into()))?;
        let resid = &yv - &x * &beta;
        (beta, resid, &rinv * rinv.transpose())
    };
    let rss = resid.dot(&resid);

    let cov = match spec.se {
        SeKind::Conventional => xtx_inv.clone() * (rss / residual_df as f64),
        SeKind::Clustered => {
            if g < 2 {
                return Err(Error::Undefined("clustered errors need two groups".into()));
            }
            let mut meat = DMatrix::<f64>::zeros(k, k);
            let mut score = vec![DVector::<f64>::zeros(k); g];
            for r in 0..n {
                for c in 0..k {
                    score[ids[r]][c] += xw[c][r] * resid[r];
                }
            }
            for s in &score {
                meat += s * s.transpose();
            }
            let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n - k) as f64);
            &xtx_inv * meat * &xtx_inv * c
        }
    };

    let dist = StudentsT::new(0.0, 1.0, residual_df as f64)
        .map_err(|_| Error::Undefined("no residual degrees of freedom".into()))?;
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let se = cov[(i, i)].max(0.0).sqrt();
            let t = beta[i] / se;
            let p = if se > 0.0 { (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0) } else { 0.0 };
            Coefficient {
                name: name.clone(),
                estimate: beta[i],
                std_error: se,
                t_value: t,
                p_value: p,
            }
        })
        .collect();
    let intercept = mean_y
        - raw
            .iter()
            .zip(beta.iter())
            .map(|(c, b)| b * c.iter().sum::<f64>() / n as f64)
            .sum::<f64>();

    Ok(RegressionResult {
        coefficients,
        intercept,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        within_r_squared: if tss_within > 0.0 { 1.0 - rss / tss_within } else { 0.0 },
        n_obs: n,
        n_groups: g,
        dropped_singletons,
        residual_df,
        rss,
        se: spec.se,
    })
}
