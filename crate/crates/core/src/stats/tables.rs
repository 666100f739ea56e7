//! Counting tables over annotated corpora.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::annotations::{BannerAnnotation, Locale};
use crate::corpus::taxonomy::{classify_compliance, Category, ComplianceClass};
use crate::error::Result;

/// Website jurisdiction crossed with visitor location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationPair {
    pub website_eu: bool,
    pub visitor: Locale,
}

impl LocationPair {
    pub const ALL: [LocationPair; 4] = [
        LocationPair { website_eu: true, visitor: Locale::Eu },
        LocationPair { website_eu: true, visitor: Locale::Us },
        LocationPair { website_eu: false, visitor: Locale::Eu },
        LocationPair { website_eu: false, visitor: Locale::Us },
    ];

    pub fn of(a: &BannerAnnotation) -> Self {
        Self {
            website_eu: a.website_eu,
            visitor: a.visitor_locale,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{} Site / {} Visitor",
            if self.website_eu { "EU" } else { "non-EU" },
            self.visitor
        )
    }
}

fn pct(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * count as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub pair: LocationPair,
    pub n: usize,
    pub counts: BTreeMap<ComplianceClass, usize>,
    pub percentages: BTreeMap<ComplianceClass, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceTable {
    pub rows: Vec<ComplianceRow>,
    /// Location pairs with no qualifying site.
    pub empty_groups: Vec<LocationPair>,
    pub include_bannerless: bool,
}

impl ComplianceTable {
    pub fn row(&self, pair: LocationPair) -> &ComplianceRow {
        self.rows.iter().find(|r| r.pair == pair).expect("all four pairs present")
    }

    /// Percentages to one decimal, one row per location pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("location,n");
        for c in ComplianceClass::ALL {
            let _ = write!(out, ",{}", c.label());
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.pair.label(), r.n);
            for c in ComplianceClass::ALL {
                let _ = write!(out, ",{:.1}", r.percentages[&c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Share of each compliance class per location pair.
///
/// Denominators are banner-bearing sites; with `include_bannerless` sites
/// labelled `None` are added to the denominator so rows no longer sum to 100.
pub fn compliance_table(annotations: &[BannerAnnotation], include_bannerless: bool) -> Result<ComplianceTable> {
    let mut rows = Vec::with_capacity(4);
    let mut empty_groups = Vec::new();
    for pair in LocationPair::ALL {
        let mut counts: BTreeMap<ComplianceClass, usize> =
            ComplianceClass::ALL.iter().map(|&c| (c, 0)).collect();
        let mut n = 0;
        for a in annotations.iter().filter(|a| LocationPair::of(a) == pair) {
            if a.category.is_banner() {
                *counts.get_mut(&classify_compliance(a.category)?).unwrap() += 1;
                n += 1;
            } else if include_bannerless && a.category == Category::None {
                n += 1;
            }
        }
        if n == 0 {
            empty_groups.push(pair);
        }
        let percentages = counts.iter().map(|(&c, &k)| (c, pct(k, n))).collect();
        rows.push(ComplianceRow {
            pair,
            n,
            counts,
            percentages,
        });
    }
    Ok(ComplianceTable {
        rows,
        empty_groups,
        include_bannerless,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub pair: LocationPair,
    pub n: usize,
    pub counts: BTreeMap<Category, usize>,
    pub percentages: BTreeMap<Category, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFrequencies {
    pub rows: Vec<FrequencyRow>,
    pub empty_groups: Vec<LocationPair>,
}

impl CategoryFrequencies {
    pub fn row(&self, pair: LocationPair) -> &FrequencyRow {
        self.rows.iter().find(|r| r.pair == pair).expect("all four pairs present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category");
        for r in &self.rows {
            let _ = write!(out, ",{}", r.pair.label());
        }
        out.push('\n');
        for c in Category::ALL.iter().filter(|c| **c != Category::Unreachable) {
            out.push_str(c.label());
            for r in &self.rows {
                let _ = write!(out, ",{:.1}", r.percentages[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Share of every label, `None` included, over reachable sites.
pub fn category_frequencies(annotations: &[BannerAnnotation]) -> CategoryFrequencies {
    let mut rows = Vec::with_capacity(4);
    let mut empty_groups = Vec::new();
    for pair in LocationPair::ALL {
        let mut counts: BTreeMap<Category, usize> = Category::ALL
            .iter()
            .filter(|c| **c != Category::Unreachable)
            .map(|&c| (c, 0))
            .collect();
        let mut n = 0;
        for a in annotations
            .iter()
            .filter(|a| LocationPair::of(a) == pair && a.category != Category::Unreachable)
        {
            *counts.get_mut(&a.category).unwrap() += 1;
            n += 1;
        }
        if n == 0 {
            empty_groups.push(pair);
        }
        let percentages = counts.iter().map(|(&c, &k)| (c, pct(k, n))).collect();
        rows.push(FrequencyRow {
            pair,
            n,
            counts,
            percentages,
        });
    }
    CategoryFrequencies { rows, empty_groups }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionLink {
    pub eu: Category,
    pub us: Category,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    /// EU websites reachable from both locations.
    pub paired: usize,
    /// Banner shown to EU visitors, and no banner or a different one to US visitors.
    pub changed: usize,
    pub change_rate: f64,
    /// Changed sites that show no banner to US visitors.
    pub removed: usize,
    /// Changed sites that show a Compliant banner to EU visitors and a
    /// banner of a lower class to US visitors.
    pub downgraded: usize,
    /// Removed banners that were Compliant for EU visitors.
    pub removed_compliant: usize,
    /// EU websites lacking one of the two reachable visits.
    pub unpaired: usize,
    /// Every EU-to-US label pair, for Sankey-style plots.
    pub links: Vec<TransitionLink>,
}

/// How EU websites alter their banner for US visitors.
pub fn transitions(annotations: &[BannerAnnotation]) -> TransitionSummary {
    let mut visits: BTreeMap<&str, [Option<Category>; 2]> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.website_eu) {
        let slot = match a.visitor_locale {
            Locale::Eu => 0,
            Locale::Us => 1,
        };
        visits.entry(&a.website_id).or_default()[slot] = Some(a.category);
    }
    let mut paired = 0;
    let mut unpaired = 0;
    let mut changed = 0;
    let mut removed = 0;
    let mut downgraded = 0;
    let mut removed_compliant = 0;
    let mut links: BTreeMap<(Category, Category), usize> = BTreeMap::new();
    for v in visits.values() {
        let (eu, us) = match v {
            [Some(eu), Some(us)]
                if *eu != Category::Unreachable && *us != Category::Unreachable =>
            {
                (*eu, *us)
            }
            _ => {
                unpaired += 1;
                continue;
            }
        };
        paired += 1;
        *links.entry((eu, us)).or_default() += 1;
        if !eu.is_banner() || eu == us {
            continue;
        }
        changed += 1;
        let eu_compliant = classify_compliance(eu).ok() == Some(ComplianceClass::Compliant);
        if us == Category::None {
            removed += 1;
            if eu_compliant {
                removed_compliant += 1;
            }
        } else if eu_compliant
            && classify_compliance(us).is_ok_and(|c| c > ComplianceClass::Compliant)
        {
            downgraded += 1;
        }
    }
    TransitionSummary {
        paired,
        changed,
        change_rate: pct(changed, paired),
        removed,
        downgraded,
        removed_compliant,
        unpaired,
        links: links
            .into_iter()
            .map(|((eu, us), count)| TransitionLink { eu, us, count })
            .collect(),
    }
}
