mod io;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use banner_salience::corpus::acquire::{
    acquire_all, append_attempt_log, write_manifest, AcquireResult, CommandFetcher,
};
use banner_salience::corpus::annotations::ingest_annotations;
use banner_salience::corpus::probe::{probe, ProbeConfig};
use banner_salience::corpus::targets::{build_targets, CctldSet, TargetConfig};
use banner_salience::perturb::ensemble_scores;
use banner_salience::pipeline::{
    analyze, read_store, report, run_pipeline, salience_scores, write_report, RunConfig,
};
use banner_salience::saliency::compute_salience;
use banner_salience::scoring::{
    contrast_baseline, threshold_grid, threshold_sweep, verdict, BoxSet, ButtonSalience, Role,
};
use banner_salience::stats::krippendorff_alpha;
use banner_salience::Error;
use clap::{Parser, Subcommand};

use crate::io::{load_boxes, load_config, load_screenshot, write_json, write_text};

#[derive(Debug, Parser)]
#[command(name = "bsal", version, about = "Button salience auditing for consent banners")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `filterbank` or `fmap:<path template with {id}>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Score the screenshot as is, without the perturbation ensemble.
    #[arg(long, global = true)]
    no_perturb: bool,
    /// Relative margin a button needs over every other button.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build target lists from a ranked domain CSV.
    Targets {
        #[command(subcommand)]
        action: TargetsCmd,
    },
    /// Check whether hosts accept connections on the web ports.
    Probe {
        hosts: Vec<String>,
        /// File with one host per line.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [443u16, 80])]
        ports: Vec<u16>,
    },
    /// Screenshot domains through an external driver with the retry ladder.
    Acquire {
        /// File with one domain per line.
        domains: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Driver program; its arguments may use {url}, {timeout} and {out}.
        #[arg(long)]
        driver: String,
        #[arg(long = "driver-arg", allow_hyphen_values = true)]
        driver_args: Vec<String>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Convert a rectangle-label export into annotation records.
    Ingest {
        export: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the salience map of a screenshot as a grayscale PNG.
    Saliency {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-button salience scores for one screenshot.
    Score {
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Manipulation verdict for one screenshot or a saved score file.
    Verdict {
        image: Option<PathBuf>,
        #[arg(long)]
        boxes: Option<PathBuf>,
        /// JSON map of role to {avg, max, combined}, instead of an image.
        #[arg(long, conflicts_with = "image")]
        scores: Option<PathBuf>,
    },
    /// Prevalence of each winning role across a threshold range.
    Sweep {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min: f64,
        #[arg(long, default_value_t = 0.10)]
        max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Include banners outside the compliant subset.
        #[arg(long)]
        all: bool,
    },
    /// Grayscale-contrast highlighting rule for one screenshot.
    Baseline {
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        margin: f64,
    },
    /// Significance tests and regressions over a results store.
    Stats {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        continuity: bool,
        #[arg(long, default_value_t = 3.0)]
        bonferroni: f64,
        /// CSV of nominal labels, one row per item and one column per rater.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Tables and plot payloads from a results store.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Annotation export, for the compliance, frequency and transition tables.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Score every annotated banner named in the configuration.
    Run,
}

#[derive(Debug, Subcommand)]
enum TargetsCmd {
    Build {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        global_top: usize,
        #[arg(long, default_value_t = 1000)]
        global_random: usize,
        #[arg(long, default_value_t = 500)]
        eu_top: usize,
        #[arg(long, default_value_t = 500)]
        eu_random: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(b) = &cli.backend {
        cfg.backend = b.parse()?;
    }
    if let Some(n) = cli.ensemble_size {
        cfg.perturbation.ensemble_size = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.no_perturb {
        cfg.perturb = false;
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn image_scores(cfg: &RunConfig, image: &Path, boxes: &BoxSet) -> Result<BTreeMap<Role, ButtonSalience>, Failure> {
    let img = load_screenshot(image)?;
    let scores = if cfg.perturb {
        ensemble_scores(&img, boxes, &cfg.effective_perturbation(), |im, bx| {
            salience_scores(&cfg.backend, &cfg.rarity, im, bx)
        })?
    } else {
        salience_scores(&cfg.backend, &cfg.rarity, &img, boxes)?
    };
    Ok(scores)
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_owned())
        .filter(|l| !l.is_empty())
        .collect())
}

fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Targets {
            action:
                TargetsCmd::Build {
                    input,
                    out,
                    global_top,
                    global_random,
                    eu_top,
                    eu_random,
                },
        } => {
            let file = std::fs::File::open(input)
                .map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
            let cfg = TargetConfig {
                global_top: *global_top,
                global_random: *global_random,
                eu_top: *eu_top,
                eu_random: *eu_random,
                seed: cli.seed.unwrap_or(0),
            };
            let list = build_targets(file, &cfg, &CctldSet::default());
            let mut text = String::new();
            for e in &list.entries {
                text.push_str(&serde_json::to_string(e).map_err(Error::from)?);
                text.push('\n');
            }
            write_text(out.as_ref(), &text)?;
            eprintln!(
                "{} targets, {} cross-group duplicates removed",
                list.entries.len(),
                list.overlaps_removed
            );
            for s in &list.shortfalls {
                eprintln!(
                    "shortfall: {:?} wanted {}, source had {}",
                    s.group, s.requested, s.available
                );
            }
            for e in &list.row_errors {
                eprintln!("line {}: {}", e.line, e.message);
            }
            if list.row_errors.is_empty() {
                Ok(())
            } else {
                Err(Failure::Partial(format!("{} malformed rows skipped", list.row_errors.len())))
            }
        }
        Command::Probe {
            hosts,
            file,
            timeout_ms,
            ports,
        } => {
            let mut all = hosts.clone();
            if let Some(f) = file {
                all.extend(read_lines(f)?);
            }
            if all.is_empty() {
                return Err(Failure::Input("no hosts given".into()));
            }
            let cfg = ProbeConfig {
                ports: ports.clone(),
                timeout: Duration::from_millis(*timeout_ms),
            };
            let mut failed = 0;
            for h in &all {
                match probe(h, &cfg) {
                    Ok(r) => println!("{}", serde_json::to_string(&r).map_err(Error::from)?),
                    Err(e) => {
                        failed += 1;
                        println!(
                            "{}",
                            serde_json::json!({ "host": h, "error": e.to_string() })
                        );
                    }
                }
            }
            if failed > 0 {
                Err(Failure::Partial(format!("{failed} host(s) could not be resolved")))
            } else {
                Ok(())
            }
        }
        Command::Acquire {
            domains,
            out_dir,
            driver,
            driver_args,
            concurrency,
            log,
            manifest,
        } => {
            let list = read_lines(domains)?;
            std::fs::create_dir_all(out_dir)
                .map_err(|e| Failure::Input(format!("{}: {e}", out_dir.display())))?;
            let results = acquire_all(&list, *concurrency, || CommandFetcher {
                program: driver.clone(),
                args: driver_args.clone(),
                out_dir: out_dir.clone(),
            });
            let log = log.clone().unwrap_or_else(|| out_dir.join("attempts.jsonl"));
            let manifest = manifest.clone().unwrap_or_else(|| out_dir.join("manifest.jsonl"));
            append_attempt_log(&log, &results)?;
            write_manifest(&manifest, &results)?;
            let manual = results
                .iter()
                .filter(|a| a.result == AcquireResult::ManualNeeded)
                .count();
            eprintln!("{} captured, {manual} need a manual visit", results.len() - manual);
            if manual > 0 {
                Err(Failure::Partial(format!("{manual} domain(s) need a manual visit")))
            } else {
                Ok(())
            }
        }
        Command::Ingest { export, out } => {
            let rep = ingest_annotations(export, &CctldSet::default())?;
            let mut text = String::new();
            for a in &rep.annotations {
                text.push_str(&serde_json::to_string(a).map_err(Error::from)?);
                text.push('\n');
            }
            write_text(out.as_ref(), &text)?;
            for e in &rep.errors {
                eprintln!(
                    "task {} (#{}): {}",
                    e.task_id.as_deref().unwrap_or("?"),
                    e.index,
                    e.message
                );
            }
            if rep.errors.is_empty() {
                Ok(())
            } else {
                Err(Failure::Partial(format!("{} record(s) rejected", rep.errors.len())))
            }
        }
        Command::Saliency { image, out } => {
            let cfg = effective_config(cli)?;
            let img = load_screenshot(image)?;
            let stack = cfg.backend.features(&img)?;
            let map = compute_salience(&stack, img.width(), img.height(), &cfg.rarity)?;
            let gray = image::GrayImage::from_raw(
                map.width() as u32,
                map.height() as u32,
                map.to_gray8(),
            )
            .expect("buffer matches dimensions");
            gray.save(out)
                .map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
            Ok(())
        }
        Command::Score { image, boxes } => {
            let cfg = effective_config(cli)?;
            let boxes = load_boxes(boxes)?;
            write_json(None, &image_scores(&cfg, image, &boxes)?)
        }
        Command::Verdict {
            image,
            boxes,
            scores,
        } => {
            let cfg = effective_config(cli)?;
            let s: BTreeMap<Role, ButtonSalience> = match (image, scores) {
                (Some(img), None) => {
                    let b = boxes
                        .as_ref()
                        .ok_or_else(|| Failure::Input("--boxes is required with an image".into()))?;
                    image_scores(&cfg, img, &load_boxes(b)?)?
                }
                (None, Some(p)) => io::load_scores(p)?,
                _ => return Err(Failure::Input("give an image with --boxes, or --scores".into())),
            };
            write_json(None, &verdict(&s, cfg.threshold)?)
        }
        Command::Sweep {
            store,
            min,
            max,
            step,
            all,
        } => {
            let records = read_store(store)?;
            let corpus: Vec<_> = records
                .iter()
                .filter(|r| *all || r.compliant_subset)
                .map(|r| r.buttons.clone())
                .collect();
            let table = threshold_sweep(&corpus, &threshold_grid(*min, *max, *step)?)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Baseline {
            image,
            boxes,
            margin,
        } => {
            let img = load_screenshot(image)?;
            write_json(None, &contrast_baseline(&img, &load_boxes(boxes)?, *margin)?)
        }
        Command::Stats {
            store,
            continuity,
            bonferroni,
            ratings,
        } => {
            let mut out = serde_json::Map::new();
            if let Some(store) = store {
                let records = read_store(store)?;
                let a = analyze(&records, *continuity, *bonferroni);
                out.insert("analysis".into(), serde_json::to_value(a).map_err(Error::from)?);
            }
            if let Some(r) = ratings {
                let matrix = io::load_ratings(r)?;
                let alpha = krippendorff_alpha(&matrix)?;
                out.insert("krippendorff_alpha".into(), alpha.into());
            }
            if out.is_empty() {
                return Err(Failure::Input("give --store and/or --ratings".into()));
            }
            write_json(None, &out)
        }
        Command::Report {
            store,
            out,
            annotations,
        } => {
            let records = read_store(store)?;
            let ann = match annotations {
                Some(p) => Some(ingest_annotations(p, &CctldSet::default())?.annotations),
                None => None,
            };
            let r = report(&records, ann.as_deref())?;
            for f in write_report(&r, out)? {
                println!("{}", out.join(f).display());
            }
            Ok(())
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(Failure::Input("run needs --config".into()));
            }
            let cfg = effective_config(cli)?;
            match run_pipeline(&cfg, &|p: &std::path::Path, id: &str| io::decode_screenshot(p, id)) {
                Ok(summary) => write_json(None, &summary),
                Err(e) if cfg.paths.store.join(banner_salience::pipeline::PARTIAL_MARKER).exists() => {
                    Err(Failure::Partial(format!("run aborted, partial store kept: {e}")))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("warning: {m}");
            ExitCode::from(2)
        }
    }
}
