//! Target-list construction from a ranked domain list.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_EU_CCTLDS: &str = include_str!("../../data/eu_cctlds.txt");

/// Set of top-level labels treated as EU jurisdictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CctldSet {
    labels: BTreeSet<String>,
}

impl Default for CctldSet {
    fn default() -> Self {
        Self::parse(DEFAULT_EU_CCTLDS)
    }
}

impl CctldSet {
    /// One label per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let labels = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| l.trim_start_matches('.').to_ascii_lowercase())
            .collect();
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(&label.to_ascii_lowercase())
    }

    /// Whether `domain`'s final label is in the set.
    pub fn matches(&self, domain: &str) -> Result<bool> {
        let d = domain.trim().trim_end_matches('.');
        if d.is_empty() {
            return Err(Error::input("empty domain"));
        }
        let tld = d.rsplit('.').next().unwrap_or(d);
        Ok(self.contains(tld))
    }
}

/// EU ccTLD check against the bundled label set.
pub fn eu_cctld_filter(domain: &str) -> Result<bool> {
    CctldSet::default().matches(domain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetGroup {
    GlobalTop,
    EuTop,
    GlobalRandom,
    EuRandom,
}

impl TargetGroup {
    /// Deduplication priority, highest first.
    pub const PRIORITY: [TargetGroup; 4] = [
        TargetGroup::GlobalTop,
        TargetGroup::EuTop,
        TargetGroup::GlobalRandom,
        TargetGroup::EuRandom,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub domain: String,
    pub rank: u64,
    pub group: TargetGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub global_top: usize,
    pub global_random: usize,
    pub eu_top: usize,
    pub eu_random: usize,
    pub seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            global_top: 1000,
            global_random: 1000,
            eu_top: 500,
            eu_random: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub group: TargetGroup,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetList {
    pub seed: u64,
    pub entries: Vec<TargetEntry>,
    /// Domains drawn by more than one group and kept only in the first.
    pub overlaps_removed: usize,
    pub shortfalls: Vec<Shortfall>,
    pub row_errors: Vec<RowError>,
}

impl TargetList {
    pub fn count(&self, group: TargetGroup) -> usize {
        self.entries.iter().filter(|e| e.group == group).count()
    }
}

/// Parse `rank,domain` rows. Bad rows are reported and skipped.
pub fn parse_ranked_csv(reader: impl Read) -> (Vec<(u64, String)>, Vec<RowError>) {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if rec.len() != 2 {
            errors.push(RowError {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
            continue;
        }
        let rank = match rec[0].parse::<u64>() {
            Ok(r) => r,
            Err(_) => {
                errors.push(RowError {
                    line,
                    message: format!("bad rank `{}`", &rec[0]),
                });
                continue;
            }
        };
        let domain = rec[1].to_ascii_lowercase();
        if domain.is_empty() || domain.contains(char::is_whitespace) || !domain.contains('.') {
            errors.push(RowError {
                line,
                message: format!("bad domain `{}`", &rec[1]),
            });
            continue;
        }
        if !seen.insert(domain.clone()) {
            errors.push(RowError {
                line,
                message: format!("duplicate domain `{domain}`"),
            });
            continue;
        }
        rows.push((rank, domain));
    }
    rows.sort_by_key(|(r, _)| *r);
    (rows, errors)
}

fn random_subset(
    pool: &[(u64, String)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(u64, String)> {
    let n = n.min(pool.len());
    let mut idx = sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Build the four target groups from a ranked list.
///
/// Top groups take the best-ranked domains; random groups sample uniformly
/// from the remainder of their source list. A domain drawn by several
/// groups stays only in the highest-priority one.
pub fn build_targets(ranked: impl Read, cfg: &TargetConfig, cctlds: &CctldSet) -> TargetList {
    let (rows, row_errors) = parse_ranked_csv(ranked);
    let eu_rows: Vec<(u64, String)> = rows
        .iter()
        .filter(|(_, d)| cctlds.matches(d).unwrap_or(false))
        .cloned()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let global_top: Vec<_> = rows.iter().take(cfg.global_top).cloned().collect();
    let eu_top: Vec<_> = eu_rows.iter().take(cfg.eu_top).cloned().collect();
    let global_rest = &rows[global_top.len()..];
    let eu_rest = &eu_rows[eu_top.len()..];
    let global_random = random_subset(global_rest, cfg.global_random, &mut rng);
    let eu_random = random_subset(eu_rest, cfg.eu_random, &mut rng);

    let mut shortfalls = Vec::new();
    let drawn = [
        (TargetGroup::GlobalTop, cfg.global_top, global_top, rows.len()),
        (TargetGroup::EuTop, cfg.eu_top, eu_top, eu_rows.len()),
        (
            TargetGroup::GlobalRandom,
            cfg.global_random,
            global_random,
            global_rest.len(),
        ),
        (TargetGroup::EuRandom, cfg.eu_random, eu_random, eu_rest.len()),
    ];
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut overlaps_removed = 0;
    for (group, requested, picked, available) in drawn {
        if picked.len() < requested {
            shortfalls.push(Shortfall {
                group,
                requested,
                available,
            });
        }
        for (rank, domain) in picked {
            if seen.insert(domain.clone()) {
                entries.push(TargetEntry {
                    domain,
                    rank,
                    group,
                });
            } else {
                overlaps_removed += 1;
            }
        }
    }
    TargetList {
        seed: cfg.seed,
        entries,
        overlaps_removed,
        shortfalls,
        row_errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cctld_membership() {
        let set = CctldSet::default();
        assert_eq!(set.len(), 29);
        assert!(eu_cctld_filter("example.de").unwrap());
        assert!(eu_cctld_filter("site.eu").unwrap());
        assert!(eu_cctld_filter("bbc.co.uk").unwrap());
        assert!(eu_cctld_filter("site.fr").unwrap());
        assert!(eu_cctld_filter("Shop.GR.").unwrap());
        assert!(!eu_cctld_filter("example.com").unwrap());
        assert!(!eu_cctld_filter("site.io").unwrap());
        assert!(!eu_cctld_filter("site.ch").unwrap());
        assert!(eu_cctld_filter("").is_err());
    }

    #[test]
    fn bad_rows_are_reported_not_fatal() {
        let csv = "1,a.com\nx,b.com\n3\n4,c.de\n5,a.com\n6,no_dot\n";
        let (rows, errs) = parse_ranked_csv(csv.as_bytes());
        assert_eq!(rows.len(), 2);
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3, 5, 6]);
    }

    #[test]
    fn overlap_between_top_groups_is_removed() {
        let csv = "1,a.de\n2,b.com\n3,c.fr\n4,d.com\n5,e.it\n";
        let cfg = TargetConfig {
            global_top: 2,
            global_random: 0,
            eu_top: 2,
            eu_random: 0,
            seed: 1,
        };
        let t = build_targets(csv.as_bytes(), &cfg, &CctldSet::default());
        assert_eq!(t.overlaps_removed, 1);
        let domains: Vec<_> = t.entries.iter().map(|e| (e.domain.as_str(), e.group)).collect();
        assert_eq!(
            domains,
            vec![
                ("a.de", TargetGroup::GlobalTop),
                ("b.com", TargetGroup::GlobalTop),
                ("c.fr", TargetGroup::EuTop),
            ]
        );
    }

    #[test]
    fn shortfall_is_reported() {
        let csv = "1,a.de\n2,b.com\n";
        let t = build_targets(csv.as_bytes(), &TargetConfig::default(), &CctldSet::default());
        assert_eq!(t.shortfalls.len(), 4);
        assert_eq!(t.entries.len(), 2);
    }
}
