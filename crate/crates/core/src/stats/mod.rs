//! Tables, significance tests, agreement and regression over a finished corpus.

pub mod agreement;
pub mod hypothesis;
pub mod regression;
pub mod tables;

pub use agreement::krippendorff_alpha;
pub use hypothesis::{mcnemar, mcnemar_counts, rm_anova, wilcoxon_signed_rank, RmAnovaResult, TestResult};
pub use regression::{fixed_effects_ols, standardize, Frame, RegressionResult, RegressionSpec, SeKind};
pub use tables::{
    category_frequencies, compliance_table, transitions, CategoryFrequencies, ComplianceTable,
    LocationPair, TransitionSummary,
};
