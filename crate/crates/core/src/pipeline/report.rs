use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VerdictRecord;
use crate::corpus::annotations::{BannerAnnotation, Locale};
use crate::error::{Error, Result};
use crate::scoring::{threshold_grid, threshold_sweep, Role, SweepTable};
use crate::stats::tables::{
    category_frequencies, compliance_table, transitions, CategoryFrequencies, ComplianceTable,
    TransitionSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Table3Cell {
    pub banners: usize,
    pub flagged: usize,
    pub percent: f64,
}

impl Table3Cell {
    fn add(&mut self, flagged: bool) {
        self.banners += 1;
        self.flagged += flagged as usize;
    }

    fn finish(&mut self) {
        self.percent = if self.banners == 0 {
            0.0
        } else {
            100.0 * self.flagged as f64 / self.banners as f64
        };
    }
}

/// Prevalence of each winning role in compliant banners, split by visitor
/// location (rows) and website location (columns), with totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3 {
    pub threshold: Option<f64>,
    /// `cells[role][visitor][site]`; visitor 0 EU, 1 US, 2 total; site 0 EU, 1 non-EU, 2 total.
    pub cells: BTreeMap<Role, [[Table3Cell; 3]; 3]>,
}

impl Table3 {
    pub fn cell(&self, role: Role, visitor: Option<Locale>, website_eu: Option<bool>) -> Table3Cell {
        let v = match visitor {
            Some(Locale::Eu) => 0,
            Some(Locale::Us) => 1,
            None => 2,
        };
        let s = match website_eu {
            Some(true) => 0,
            Some(false) => 1,
            None => 2,
        };
        self.cells[&role][v][s]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("role,visitor,EU Site,non-EU Site,Total\n");
        for (role, grid) in &self.cells {
            for (label, row) in ["EU IP", "US IP", "Total"].iter().zip(grid) {
                let _ = writeln!(
                    out,
                    "{role},{label},{:.1},{:.1},{:.1}",
                    row[0].percent, row[1].percent, row[2].percent
                );
            }
        }
        out
    }
}

pub fn table3(records: &[VerdictRecord]) -> Table3 {
    let mut cells: BTreeMap<Role, [[Table3Cell; 3]; 3]> = Role::BUTTONS
        .iter()
        .map(|&r| (r, [[Table3Cell::default(); 3]; 3]))
        .collect();
    let subset: Vec<&VerdictRecord> = records.iter().filter(|r| r.compliant_subset).collect();
    for r in &subset {
        let v = match r.visitor_locale {
            Locale::Eu => 0,
            Locale::Us => 1,
        };
        let s = if r.website_eu { 0 } else { 1 };
        for (role, grid) in cells.iter_mut() {
            let won = r.verdict.winner == Some(*role);
            for (vi, si) in [(v, s), (v, 2), (2, s), (2, 2)] {
                grid[vi][si].add(won);
            }
        }
    }
    for grid in cells.values_mut() {
        grid.iter_mut().flatten().for_each(Table3Cell::finish);
    }
    let threshold = subset.first().map(|r| r.verdict.threshold);
    Table3 { threshold, cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Lower edges of the bins.
    pub edges: Vec<f64>,
    pub counts: BTreeMap<Role, Vec<usize>>,
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 16.0;

fn histogram(records: &[&VerdictRecord], pick: impl Fn(&crate::scoring::ButtonSalience) -> f64) -> Histogram {
    let bins = (256.0 / HISTOGRAM_BIN_WIDTH) as usize;
    let mut counts: BTreeMap<Role, Vec<usize>> =
        Role::BUTTONS.iter().map(|&r| (r, vec![0; bins])).collect();
    for r in records {
        for (role, s) in &r.buttons {
            if let Some(c) = counts.get_mut(role) {
                let i = ((pick(s) / HISTOGRAM_BIN_WIDTH) as usize).min(bins - 1);
                c[i] += 1;
            }
        }
    }
    Histogram {
        bin_width: HISTOGRAM_BIN_WIDTH,
        edges: (0..bins).map(|i| i as f64 * HISTOGRAM_BIN_WIDTH).collect(),
        counts,
    }
}

/// Average and maximum button salience distributions over compliant banners.
pub fn histograms(records: &[VerdictRecord]) -> BTreeMap<String, Histogram> {
    let subset: Vec<&VerdictRecord> = records.iter().filter(|r| r.compliant_subset).collect();
    BTreeMap::from([
        ("avg".to_owned(), histogram(&subset, |s| s.avg)),
        ("max".to_owned(), histogram(&subset, |s| s.max)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table3: Table3,
    pub sweep: Option<SweepTable>,
    pub histograms: BTreeMap<String, Histogram>,
    pub table2: Option<ComplianceTable>,
    pub frequencies: Option<CategoryFrequencies>,
    pub transitions: Option<TransitionSummary>,
}

/// Tables and plot payloads for a results store; annotation-level tables
/// are included when the annotations are supplied.
pub fn report(records: &[VerdictRecord], annotations: Option<&[BannerAnnotation]>) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::input("results store is empty"));
    }
    let compliant: Vec<_> = records
        .iter()
        .filter(|r| r.compliant_subset)
        .map(|r| r.buttons.clone())
        .collect();
    let sweep = if compliant.is_empty() {
        None
    } else {
        Some(threshold_sweep(&compliant, &threshold_grid(0.0, 0.10, 0.001)?)?)
    };
    let (table2, frequencies, trans) = match annotations {
        Some(a) => (
            Some(compliance_table(a, false)?),
            Some(category_frequencies(a)),
            Some(transitions(a)),
        ),
        None => (None, None, None),
    };
    Ok(Report {
        table3: table3(records),
        sweep,
        histograms: histograms(records),
        table2,
        frequencies,
        transitions: trans,
    })
}

fn write(dir: &Path, name: &str, contents: String) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Error::io(&p, e))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Write every table as CSV and every plot payload as JSON; returns the
/// file names written.
pub fn write_report(r: &Report, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![];
    let mut put = |name: &str, contents: String| -> Result<()> {
        write(dir, name, contents)?;
        files.push(name.to_owned());
        Ok(())
    };
    put("table3.csv", r.table3.to_csv())?;
    put("table3.json", pretty(&r.table3)?)?;
    put("histograms.json", pretty(&r.histograms)?)?;
    if let Some(s) = &r.sweep {
        put("sweep.csv", s.to_csv())?;
        put("sweep.json", pretty(s)?)?;
    }
    if let Some(t) = &r.table2 {
        put("table2.csv", t.to_csv())?;
    }
    if let Some(f) = &r.frequencies {
        put("category_frequencies.csv", f.to_csv())?;
        put("category_frequencies.json", pretty(f)?)?;
    }
    if let Some(t) = &r.transitions {
        put("sankey.json", pretty(t)?)?;
    }
    Ok(files)
}
