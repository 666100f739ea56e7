//! End-to-end run over an annotated corpus and the reports built from it.

mod analysis;
mod report;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::annotations::Locale;
use crate::corpus::taxonomy::{Category, ComplianceClass};
use crate::error::{Error, Result};
use crate::features::Backend;
use crate::image::Screenshot;
use crate::perturb::PerturbationConfig;
use crate::saliency::{compute_salience, RarityConfig};
use crate::scoring::{
    score_boxes, BoxSet, ButtonSalience, DesignFeatures, Role, Verdict, DEFAULT_BASELINE_MARGIN,
    DEFAULT_THRESHOLD,
};

pub use analysis::{analyze, design_regressions, location_regression, Analysis, DesignRegressions};
pub use report::{histograms, report, table3, write_report, Histogram, Report, Table3, Table3Cell};
pub use run::{
    read_store, resolve_image_path, run_pipeline, ImageLoader, RunSummary, SkipRecord, PARTIAL_MARKER,
    RECORDS_FILE, RUN_FILE, SKIPPED_FILE,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub annotations: PathBuf,
    /// Directory screenshots are resolved against.
    pub screenshots: PathBuf,
    pub manifest: Option<PathBuf>,
    pub fmap_dir: Option<PathBuf>,
    /// Output directory of the results store.
    pub store: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: Backend,
    pub rarity: RarityConfig,
    pub perturbation: PerturbationConfig,
    /// Average scores over the perturbation ensemble.
    pub perturb: bool,
    pub threshold: f64,
    pub baseline_margin: f64,
    pub paths: Paths,
    pub concurrency: usize,
    /// Master seed; overrides `perturbation.master_seed`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: Backend::default(),
            rarity: RarityConfig::default(),
            perturbation: PerturbationConfig::default(),
            perturb: true,
            threshold: DEFAULT_THRESHOLD,
            baseline_margin: DEFAULT_BASELINE_MARGIN,
            paths: Paths::default(),
            concurrency: 4,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.threshold) {
            return Err(Error::input("threshold must lie in [0, 0.5]"));
        }
        if !(self.baseline_margin >= 0.0) {
            return Err(Error::input("baseline_margin must be non-negative"));
        }
        if self.concurrency == 0 {
            return Err(Error::input("concurrency must be at least 1"));
        }
        self.rarity.validate()?;
        self.perturbation.validate()?;
        if self.perturb && !self.backend.supports_perturbation() {
            return Err(Error::input(
                "the fmap backend reads precomputed activations and cannot score perturbed \
                 images; disable perturbation",
            ));
        }
        Ok(())
    }

    pub fn effective_perturbation(&self) -> PerturbationConfig {
        PerturbationConfig {
            master_seed: self.seed,
            ..self.perturbation
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One scored banner as persisted in the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub website_id: String,
    pub visitor_locale: Locale,
    pub category: Category,
    pub compliance: ComplianceClass,
    pub website_eu: bool,
    /// Full, Full choices or Corner Reject.
    pub compliant_subset: bool,
    /// Scores used for the verdict (ensemble mean when perturbation is on).
    pub buttons: BTreeMap<Role, ButtonSalience>,
    /// Scores of the original screenshot.
    pub unperturbed: BTreeMap<Role, ButtonSalience>,
    pub design: BTreeMap<Role, DesignFeatures>,
    pub verdict: Verdict,
    /// Contrast-baseline flag; absent without a reject button.
    pub baseline_flagged: Option<bool>,
    pub config_fingerprint: String,
}

/// Features, salience and per-box scores for one image.
pub fn salience_scores(
    backend: &Backend,
    rarity: &RarityConfig,
    img: &Screenshot,
    boxes: &BoxSet,
) -> Result<BTreeMap<Role, ButtonSalience>> {
    let stack = backend.features(img)?;
    let map = compute_salience(&stack, img.width(), img.height(), rarity)?;
    score_boxes(&map, boxes)
}
