use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{salience_scores, RunConfig, VerdictRecord};
use crate::corpus::annotations::{ingest_annotations, BannerAnnotation, Locale};
use crate::corpus::targets::CctldSet;
use crate::corpus::taxonomy::classify_compliance;
use crate::error::{Error, Result};
use crate::image::Screenshot;
use crate::perturb::ensemble_scores;
use crate::scoring::{contrast_baseline, extract_design_features, verdict, Role};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SKIPPED_FILE: &str = "skipped.jsonl";
pub const RUN_FILE: &str = "run.json";
/// Present only when a run aborted before finishing.
pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Decodes screenshots; the core library has no image codecs of its own.
pub trait ImageLoader: Sync {
    fn load(&self, path: &Path, source_id: &str) -> Result<Screenshot>;
}

impl<F> ImageLoader for F
where
    F: Fn(&Path, &str) -> Result<Screenshot> + Sync,
{
    fn load(&self, path: &Path, source_id: &str) -> Result<Screenshot> {
        self(path, source_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkipRecord {
    pub website_id: String,
    pub visitor_locale: Option<Locale>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub store: PathBuf,
    pub config_fingerprint: String,
    pub records: usize,
    pub skipped: usize,
}

#[derive(Serialize)]
struct RunFile<'a> {
    config_fingerprint: &'a str,
    config: &'a RunConfig,
    records: usize,
    skipped: usize,
}

/// Screenshot location for an annotation: its own `image` field resolved
/// against the screenshot directory, else `<website_id>_<locale>.png`.
pub fn resolve_image_path(a: &BannerAnnotation, screenshots: &Path) -> PathBuf {
    match &a.image {
        Some(img) => {
            let p = Path::new(img);
            if p.is_absolute() && p.exists() {
                p.to_path_buf()
            } else if p.is_absolute() {
                screenshots.join(p.file_name().unwrap_or_default())
            } else {
                screenshots.join(p)
            }
        }
        None => screenshots.join(format!("{}_{}.png", a.website_id, a.visitor_locale)),
    }
}

pub(crate) fn source_id(a: &BannerAnnotation) -> String {
    format!("{}@{}", a.website_id, a.visitor_locale)
}

enum Outcome {
    Record(Box<VerdictRecord>),
    Skip(SkipRecord),
}

fn skip(a: &BannerAnnotation, reason: impl Into<String>) -> Outcome {
    Outcome::Skip(SkipRecord {
        website_id: a.website_id.clone(),
        visitor_locale: Some(a.visitor_locale),
        reason: reason.into(),
    })
}

fn process(
    a: &BannerAnnotation,
    cfg: &RunConfig,
    fingerprint: &str,
    loader: &dyn ImageLoader,
) -> Result<Outcome> {
    if !a.category.is_banner() {
        return Ok(skip(a, format!("no banner ({})", a.category)));
    }
    let buttons = Role::BUTTONS.iter().filter(|r| a.boxes.contains_key(r)).count();
    if buttons < 2 {
        return Ok(skip(a, "fewer than two annotated buttons"));
    }
    let path = resolve_image_path(a, &cfg.paths.screenshots);
    if !path.exists() {
        return Ok(skip(a, format!("missing screenshot {}", path.display())));
    }
    let img = match loader.load(&path, &source_id(a)) {
        Ok(img) => img,
        Err(e) => return Ok(skip(a, format!("unreadable screenshot: {e}"))),
    };
    if let (Some(w), Some(h)) = (a.image_width, a.image_height) {
        if (w as usize, h as usize) != (img.width(), img.height()) {
            return Ok(skip(
                a,
                format!(
                    "screenshot is {}x{} but annotation expects {w}x{h}",
                    img.width(),
                    img.height()
                ),
            ));
        }
    }
    if let Some((role, _)) = a.boxes.iter().find(|(_, b)| !b.fits(img.width(), img.height())) {
        return Ok(skip(a, format!("{role} box lies outside the screenshot")));
    }

    let unperturbed = salience_scores(&cfg.backend, &cfg.rarity, &img, &a.boxes)?;
    let buttons = if cfg.perturb {
        ensemble_scores(&img, &a.boxes, &cfg.effective_perturbation(), |im, bx| {
            salience_scores(&cfg.backend, &cfg.rarity, im, bx)
        })?
    } else {
        unperturbed.clone()
    };
    let v = verdict(&buttons, cfg.threshold)?;
    let baseline_flagged = if a.boxes.contains_key(&Role::Accept) && a.boxes.contains_key(&Role::Reject) {
        Some(contrast_baseline(&img, &a.boxes, cfg.baseline_margin)?.flagged)
    } else {
        None
    };
    let design = extract_design_features(&img, &a.boxes, &a.flags)?;
    Ok(Outcome::Record(Box::new(VerdictRecord {
        website_id: a.website_id.clone(),
        visitor_locale: a.visitor_locale,
        category: a.category,
        compliance: classify_compliance(a.category)?,
        website_eu: a.website_eu,
        compliant_subset: a.category.is_compliant_subset(),
        buttons,
        unperturbed,
        design,
        verdict: v,
        baseline_flagged,
        config_fingerprint: fingerprint.to_owned(),
    })))
}

fn require_exists(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::input(format!("{what} `{}` does not exist", p.display())))
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn run_all(
    annotations: &[BannerAnnotation],
    cfg: &RunConfig,
    fingerprint: &str,
    loader: &dyn ImageLoader,
) -> Vec<Result<Outcome>> {
    let work = |a: &BannerAnnotation| process(a, cfg, fingerprint, loader);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(cfg.concurrency).build() {
            Ok(pool) => pool.install(|| annotations.par_iter().map(work).collect()),
            Err(_) => annotations.iter().map(work).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        annotations.iter().map(work).collect()
    }
}

/// Score every annotated banner and write the results store.
///
/// Records are sorted by website and locale so identical configurations give
/// byte-identical stores. Unusable records are skipped with a reason; a
/// backend failure stops the run, keeps what finished and leaves a
/// `PARTIAL` marker.
pub fn run_pipeline(cfg: &RunConfig, loader: &dyn ImageLoader) -> Result<RunSummary> {
    cfg.validate()?;
    require_exists(&cfg.paths.annotations, "annotation export")?;
    require_exists(&cfg.paths.screenshots, "screenshot directory")?;
    if let Some(p) = &cfg.paths.manifest {
        require_exists(p, "corpus manifest")?;
    }
    if let Some(p) = &cfg.paths.fmap_dir {
        require_exists(p, "fmap directory")?;
    }
    let store = &cfg.paths.store;
    fs::create_dir_all(store).map_err(|e| Error::io(store, e))?;
    let marker = store.join(PARTIAL_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let fingerprint = cfg.fingerprint();

    let ingest = ingest_annotations(&cfg.paths.annotations, &CctldSet::default())?;
    let mut skipped: Vec<SkipRecord> = ingest
        .errors
        .iter()
        .map(|e| SkipRecord {
            website_id: e.task_id.clone().unwrap_or_else(|| format!("#{}", e.index)),
            visitor_locale: None,
            reason: format!("invalid annotation: {}", e.message),
        })
        .collect();

    let mut seen = BTreeMap::new();
    let mut unique = Vec::new();
    for a in ingest.annotations {
        if seen.insert(a.key(), ()).is_some() {
            skipped.push(SkipRecord {
                website_id: a.website_id.clone(),
                visitor_locale: Some(a.visitor_locale),
                reason: "duplicate annotation for this website and locale".into(),
            });
        } else {
            unique.push(a);
        }
    }

    let mut records = Vec::new();
    let mut failure = None;
    for out in run_all(&unique, cfg, &fingerprint, loader) {
        match out {
            Ok(Outcome::Record(r)) => records.push(*r),
            Ok(Outcome::Skip(s)) => skipped.push(s),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    records.sort_by(|a, b| {
        (&a.website_id, a.visitor_locale).cmp(&(&b.website_id, b.visitor_locale))
    });
    skipped.sort();

    write_jsonl(&store.join(RECORDS_FILE), &records)?;
    write_jsonl(&store.join(SKIPPED_FILE), &skipped)?;
    let run_file = store.join(RUN_FILE);
    let meta = serde_json::to_string_pretty(&RunFile {
        config_fingerprint: &fingerprint,
        config: cfg,
        records: records.len(),
        skipped: skipped.len(),
    })?;
    fs::write(&run_file, meta + "\n").map_err(|e| Error::io(&run_file, e))?;

    if let Some(e) = failure {
        fs::write(&marker, format!("{e}\n")).map_err(|err| Error::io(&marker, err))?;
        return Err(e);
    }
    Ok(RunSummary {
        store: store.clone(),
        config_fingerprint: fingerprint,
        records: records.len(),
        skipped: skipped.len(),
    })
}

/// Load the records of a store, rejecting stores that mix configurations.
pub fn read_store(store: &Path) -> Result<Vec<VerdictRecord>> {
    let path = if store.is_dir() {
        store.join(RECORDS_FILE)
    } else {
        store.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: VerdictRecord = serde_json::from_str(line)
            .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    if let Some(first) = records.first() {
        if let Some(other) = records
            .iter()
            .find(|r| r.config_fingerprint != first.config_fingerprint)
        {
            return Err(Error::input(format!(
                "store mixes configurations {} and {}",
                first.config_fingerprint, other.config_fingerprint
            )));
        }
    }
    Ok(records)
}
