use serde::{Deserialize, Serialize};

use super::VerdictRecord;
use crate::corpus::annotations::Locale;
use crate::error::Result;
use crate::scoring::Role;
use crate::stats::hypothesis::{mcnemar, rm_anova, wilcoxon_signed_rank, RmAnovaResult, TestResult};
use crate::stats::regression::{fixed_effects_ols, Frame, RegressionResult, RegressionSpec};

type Outcome<T> = std::result::Result<T, String>;

fn outcome<T>(r: Result<T>) -> Outcome<T> {
    r.map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRegressions {
    pub full: Outcome<RegressionResult>,
    pub brightness_contrast: Outcome<RegressionResult>,
    pub fixed_effects_only: Outcome<RegressionResult>,
    /// Binary design flags left out because no button in the corpus varies on them.
    pub omitted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub compliant_banners: usize,
    /// Salience verdict (accept wins) against the contrast baseline.
    pub mcnemar: Outcome<TestResult>,
    pub rm_anova: Outcome<RmAnovaResult>,
    pub wilcoxon_accept_manage: Outcome<TestResult>,
    pub wilcoxon_accept_reject: Outcome<TestResult>,
    pub location_regression: Outcome<RegressionResult>,
    pub design: DesignRegressions,
}

/// Button salience on button label, visitor location and website location
/// with website fixed effects. Website location is constant within a
/// website and is absorbed by the fixed effects; its interactions remain.
pub fn location_regression(records: &[VerdictRecord]) -> Result<RegressionResult> {
    let mut f = Frame::default();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for r in records.iter().filter(|r| r.compliant_subset) {
        for (role, s) in r.buttons.iter().filter(|(k, _)| Role::BUTTONS.contains(k)) {
            let rej = (*role == Role::Reject) as u8 as f64;
            let man = (*role == Role::Manage) as u8 as f64;
            let ip = (r.visitor_locale == Locale::Eu) as u8 as f64;
            let site = r.website_eu as u8 as f64;
            f.groups.push(r.website_id.clone());
            f.response.push(s.combined);
            for (c, v) in cols.iter_mut().zip([
                rej,
                man,
                ip,
                rej * site,
                rej * ip,
                man * site,
                man * ip,
                site * ip,
                rej * ip * site,
                man * ip * site,
            ]) {
                c.push(v);
            }
        }
    }
    const NAMES: [&str; 10] = [
        "Reject Button",
        "Manage Button",
        "EU IP Address",
        "Reject x EU website",
        "Reject x EU IP",
        "Manage x EU website",
        "Manage x EU IP",
        "EU website x EU IP",
        "Reject x EU IP x EU website",
        "Manage x EU IP x EU website",
    ];
    for (name, c) in NAMES.iter().zip(cols) {
        f.push_column(*name, c);
    }
    let spec = RegressionSpec {
        predictors: NAMES.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    fixed_effects_ols(&spec, &f)
}

const CONTINUOUS: [&str; 5] = ["Button Size", "Brightness", "Contrast", "Button Distance", "BB Distance"];
const BINARY: [&str; 4] = ["Corner", "Link", "Hidden", "Choice Menu"];

fn design_frame(records: &[VerdictRecord]) -> Frame {
    let mut f = Frame::default();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 9];
    for r in records {
        for (role, d) in &r.design {
            let Some(s) = r.unperturbed.get(role) else { continue };
            if !Role::BUTTONS.contains(role) {
                continue;
            }
            f.groups.push(r.website_id.clone());
            f.response.push(s.combined);
            let b = |x: bool| x as u8 as f64;
            for (c, v) in cols.iter_mut().zip([
                d.button_size,
                d.brightness,
                d.contrast,
                d.button_distance,
                d.bb_distance,
                b(d.corner),
                b(d.link),
                b(d.hidden),
                b(d.choice_menu),
            ]) {
                c.push(v);
            }
        }
    }
    for (name, c) in CONTINUOUS.iter().chain(BINARY.iter()).zip(cols) {
        f.push_column(*name, c);
    }
    f
}

/// Unperturbed salience (scaled to [0, 1]) on button design features with
/// website fixed effects, plus the two nested models used for the variance
/// decomposition.
pub fn design_regressions(records: &[VerdictRecord]) -> DesignRegressions {
    let f = design_frame(records);
    let omitted: Vec<String> = BINARY
        .iter()
        .filter(|n| {
            let c = f.column(n).unwrap_or(&[]);
            c.iter().all(|v| *v == c[0])
        })
        .map(|s| s.to_string())
        .collect();
    let spec = |preds: &[&str]| RegressionSpec {
        predictors: preds.iter().map(|s| s.to_string()).collect(),
        standardize: preds
            .iter()
            .filter(|p| CONTINUOUS.contains(p))
            .map(|s| s.to_string())
            .collect(),
        response_scale: 0.5,
        ..Default::default()
    };
    let full: Vec<&str> = CONTINUOUS
        .iter()
        .chain(BINARY.iter())
        .copied()
        .filter(|p| !omitted.iter().any(|o| o == p))
        .collect();
    DesignRegressions {
        full: outcome(fixed_effects_ols(&spec(&full), &f)),
        brightness_contrast: outcome(fixed_effects_ols(&spec(&["Brightness", "Contrast"]), &f)),
        fixed_effects_only: outcome(fixed_effects_ols(&spec(&[]), &f)),
        omitted,
    }
}

/// Significance tests and regressions over a results store.
pub fn analyze(records: &[VerdictRecord], continuity: bool, bonferroni: f64) -> Analysis {
    let compliant: Vec<&VerdictRecord> = records.iter().filter(|r| r.compliant_subset).collect();
    let pairs: Vec<(bool, bool)> = compliant
        .iter()
        .filter_map(|r| r.baseline_flagged.map(|b| (r.verdict.manipulation_accept, b)))
        .collect();
    let matrix: Vec<Vec<Option<f64>>> = compliant
        .iter()
        .map(|r| {
            Role::BUTTONS
                .iter()
                .map(|role| r.buttons.get(role).map(|s| s.combined))
                .collect()
        })
        .collect();
    let paired = |other: Role| -> Result<TestResult> {
        let (a, b): (Vec<f64>, Vec<f64>) = compliant
            .iter()
            .filter_map(|r| Some((r.buttons.get(&Role::Accept)?.combined, r.buttons.get(&other)?.combined)))
            .unzip();
        wilcoxon_signed_rank(&a, &b, bonferroni)
    };
    Analysis {
        compliant_banners: compliant.len(),
        mcnemar: outcome(mcnemar(&pairs, continuity)),
        rm_anova: outcome(rm_anova(&matrix)),
        wilcoxon_accept_manage: outcome(paired(Role::Manage)),
        wilcoxon_accept_reject: outcome(paired(Role::Reject)),
        location_regression: outcome(location_regression(records)),
        design: design_regressions(records),
    }
}
