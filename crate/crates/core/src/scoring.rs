//! Button-level salience, manipulation verdicts, threshold sweeps, the
//! grayscale-contrast baseline and per-button design features.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma, Screenshot};
use crate::saliency::SalienceMap;

/// Default Weber fraction used to call one button noticeably more salient.
pub const DEFAULT_THRESHOLD: f64 = 0.07;
/// Default relative margin for the contrast baseline.
pub const DEFAULT_BASELINE_MARGIN: f64 = 0.10;

/// Relative slack on the inclusive threshold comparison, so that e.g.
/// `1.07 >= 1.07 * 1.00` is not lost to rounding.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Banner,
    Accept,
    Reject,
    Manage,
    Other,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Banner, Role::Accept, Role::Reject, Role::Manage, Role::Other];
    /// Roles compared by the verdict.
    pub const BUTTONS: [Role; 3] = [Role::Accept, Role::Reject, Role::Manage];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Banner => "banner",
            Role::Accept => "accept",
            Role::Reject => "reject",
            Role::Manage => "manage",
            Role::Other => "other",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::input(format!("unknown role `{s}`")))
    }
}

/// Pixel rectangle, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::input("bounding box must have positive size"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.h)
            .flat_map(move |y| (self.x..self.x + self.w).map(move |x| (x as usize, y as usize)))
    }
}

pub type BoxSet = BTreeMap<Role, BoundingBox>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ButtonSalience {
    pub role: Role,
    pub avg: f64,
    pub max: f64,
    pub combined: f64,
}

impl ButtonSalience {
    pub fn from_avg_max(role: Role, avg: f64, max: f64) -> Self {
        Self {
            role,
            avg,
            max,
            combined: avg / 255.0 + max / 255.0,
        }
    }
}

pub fn score_button(map: &SalienceMap, bbox: &BoundingBox, role: Role) -> Result<ButtonSalience> {
    if !bbox.fits(map.width(), map.height()) {
        return Err(Error::input(format!(
            "{role} box {bbox:?} exceeds {}x{} map",
            map.width(),
            map.height()
        )));
    }
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for (x, y) in bbox.pixels() {
        let v = map.get(x, y);
        sum += v;
        max = max.max(v);
    }
    let avg = (sum / bbox.area() as f64).min(max);
    Ok(ButtonSalience::from_avg_max(role, avg, max))
}

/// Score every box in the set.
pub fn score_boxes(map: &SalienceMap, boxes: &BoxSet) -> Result<BTreeMap<Role, ButtonSalience>> {
    boxes
        .iter()
        .map(|(&role, b)| score_button(map, b, role).map(|s| (role, s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub threshold: f64,
    pub winner: Option<Role>,
    pub manipulation_accept: bool,
    pub manipulation_reject: bool,
    pub manipulation_manage: bool,
    /// `"a>b"` -> `combined(a)/combined(b) - 1`; `None` when `combined(b)` is 0.
    pub margins: BTreeMap<String, Option<f64>>,
}

/// Whether a button scoring `top` is noticeably above one scoring `other`.
pub fn dominates(top: f64, other: f64, threshold: f64) -> bool {
    top > other && top >= (1.0 + threshold) * other * (1.0 - BOUNDARY_SLACK)
}

/// Decide which button, if any, is at least `threshold` (relative) more
/// salient than every other scored button.
pub fn verdict(scores: &BTreeMap<Role, ButtonSalience>, threshold: f64) -> Result<Verdict> {
    verdict_from_combined(
        &Role::BUTTONS
            .into_iter()
            .filter_map(|r| scores.get(&r).map(|s| (r, s.combined)))
            .collect::<Vec<_>>(),
        threshold,
    )
}

pub fn verdict_from_combined(combined: &[(Role, f64)], threshold: f64) -> Result<Verdict> {
    if !(threshold >= 0.0) {
        return Err(Error::input("threshold must be non-negative"));
    }
    let buttons: Vec<(Role, f64)> = combined
        .iter()
        .copied()
        .filter(|(r, _)| Role::BUTTONS.contains(r))
        .collect();
    if buttons.len() < 2 {
        return Err(Error::input("verdict needs at least two of accept/reject/manage"));
    }
    let winner = buttons
        .iter()
        .find(|(r, c)| {
            buttons
                .iter()
                .filter(|(s, _)| s != r)
                .all(|(_, o)| dominates(*c, *o, threshold))
        })
        .map(|(r, _)| *r);
    let mut margins = BTreeMap::new();
    for (r, cr) in &buttons {
        for (s, cs) in &buttons {
            if r != s {
                let m = if *cs > 0.0 { Some(cr / cs - 1.0) } else { None };
                margins.insert(format!("{r}>{s}"), m);
            }
        }
    }
    Ok(Verdict {
        threshold,
        winner,
        manipulation_accept: winner == Some(Role::Accept),
        manipulation_reject: winner == Some(Role::Reject),
        manipulation_manage: winner == Some(Role::Manage),
        margins,
    })
}

/// Evenly spaced thresholds from `min` to `max` inclusive.
pub fn threshold_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(min >= 0.0) || max < min {
        return Err(Error::input("threshold grid needs 0 <= min <= max and step > 0"));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let t = min + i as f64 * step;
            (t * 1e9).round() / 1e9
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub accept: f64,
    pub reject: f64,
    pub manage: f64,
    pub none: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub banners: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,accept,reject,manage,none\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.threshold, r.accept, r.reject, r.manage, r.none
            ));
        }
        out
    }
}

/// Share of banners won by each role at each threshold.
pub fn threshold_sweep(
    corpus: &[BTreeMap<Role, ButtonSalience>],
    thresholds: &[f64],
) -> Result<SweepTable> {
    if corpus.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    let n = corpus.len() as f64;
    let rows = thresholds
        .iter()
        .map(|&t| {
            let mut counts = [0usize; 4];
            for banner in corpus {
                let v = verdict(banner, t)?;
                let slot = match v.winner {
                    Some(Role::Accept) => 0,
                    Some(Role::Reject) => 1,
                    Some(Role::Manage) => 2,
                    _ => 3,
                };
                counts[slot] += 1;
            }
            Ok(SweepRow {
                threshold: t,
                accept: counts[0] as f64 / n,
                reject: counts[1] as f64 / n,
                manage: counts[2] as f64 / n,
                none: counts[3] as f64 / n,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        banners: corpus.len(),
        rows,
    })
}

fn mean_gray(img: &Screenshot, bbox: &BoundingBox) -> Result<f64> {
    if !bbox.fits(img.width(), img.height()) {
        return Err(Error::input(format!("box {bbox:?} exceeds image")));
    }
    let sum: f64 = bbox
        .pixels()
        .map(|(x, y)| {
            let [r, g, b] = img.pixel(x, y);
            luma(r, g, b)
        })
        .sum();
    Ok(sum / bbox.area() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub flagged: bool,
    pub contrasts: BTreeMap<Role, f64>,
}

/// Grayscale-contrast highlighting rule: the accept button is flagged when
/// its contrast against the banner exceeds every other button's by the
/// relative `margin`.
pub fn contrast_baseline(img: &Screenshot, boxes: &BoxSet, margin: f64) -> Result<BaselineResult> {
    let banner = boxes
        .get(&Role::Banner)
        .ok_or_else(|| Error::input("contrast baseline needs a banner box"))?;
    for needed in [Role::Accept, Role::Reject] {
        if !boxes.contains_key(&needed) {
            return Err(Error::input(format!("contrast baseline needs a {needed} box")));
        }
    }
    let banner_gray = mean_gray(img, banner)?;
    let contrasts: BTreeMap<Role, f64> = Role::BUTTONS
        .into_iter()
        .filter_map(|r| boxes.get(&r).map(|b| (r, b)))
        .map(|(r, b)| mean_gray(img, b).map(|g| (r, (g - banner_gray).abs())))
        .collect::<Result<_>>()?;
    let accept = contrasts[&Role::Accept];
    let flagged = contrasts
        .iter()
        .filter(|(r, _)| **r != Role::Accept)
        .all(|(_, &c)| accept > c && accept >= (1.0 + margin) * c);
    Ok(BaselineResult { flagged, contrasts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ButtonFlags {
    pub link: bool,
    pub hidden: bool,
    pub choice_menu: bool,
    pub corner: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignFeatures {
    pub button_size: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub button_distance: f64,
    pub bb_distance: f64,
    pub corner: bool,
    pub link: bool,
    pub hidden: bool,
    pub choice_menu: bool,
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Geometric and photometric descriptors of every non-banner box.
pub fn extract_design_features(
    img: &Screenshot,
    boxes: &BoxSet,
    flags: &BTreeMap<Role, ButtonFlags>,
) -> Result<BTreeMap<Role, DesignFeatures>> {
    let banner = boxes
        .get(&Role::Banner)
        .ok_or_else(|| Error::input("design features need a banner box"))?;
    let banner_gray = mean_gray(img, banner)?;
    let page_center = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    boxes
        .iter()
        .filter(|(r, _)| **r != Role::Banner)
        .map(|(&role, b)| {
            let brightness = mean_gray(img, b)?;
            let f = flags.get(&role).copied().unwrap_or_default();
            Ok((
                role,
                DesignFeatures {
                    button_size: b.area() as f64,
                    brightness,
                    contrast: (brightness - banner_gray).abs(),
                    button_distance: distance(b.center(), page_center),
                    bb_distance: distance(b.center(), banner.center()),
                    corner: f.corner,
                    link: f.link,
                    hidden: f.hidden,
                    choice_menu: f.choice_menu,
                },
            ))
        })
        .collect()
}
