//! Ingest of rectangle-label annotation exports.
//!
//! The export is a JSON array of tasks. Each task carries `data` (image path,
//! `website_id`, `visitor_locale`, optional `website_eu`) and a list of
//! `annotations`, each with a `result` list. Results are either rectangles
//! (`rectanglelabels`, percent coordinates, one role label) or `choices`:
//! from `category` for the banner label, or from `button_flags` with the
//! `id` of the rectangle the flags belong to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::targets::CctldSet;
use super::taxonomy::Category;
use crate::error::{Error, Result};
use crate::scoring::{BoundingBox, BoxSet, ButtonFlags, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Locale {
    #[serde(rename = "EU")]
    Eu,
    #[serde(rename = "US")]
    Us,
}

impl Locale {
    pub fn as_str(self) -> &'static str {
        match self {
            Locale::Eu => "EU",
            Locale::Us => "US",
        }
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Locale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EU" => Ok(Locale::Eu),
            "US" | "NY" => Ok(Locale::Us),
            _ => Err(Error::input(format!("unknown visitor locale `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BannerAnnotation {
    pub website_id: String,
    pub visitor_locale: Locale,
    pub category: Category,
    pub website_eu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<u32>,
    #[serde(default)]
    pub boxes: BoxSet,
    #[serde(default)]
    pub flags: BTreeMap<Role, ButtonFlags>,
}

impl BannerAnnotation {
    /// Key used for persisted results.
    pub fn key(&self) -> (String, Locale) {
        (self.website_id.clone(), self.visitor_locale)
    }

    /// Structural checks shared by ingest and programmatic construction.
    pub fn validate(&self) -> Result<()> {
        if self.website_id.trim().is_empty() {
            return Err(Error::input("empty website_id"));
        }
        if !self.category.is_banner() {
            if !self.boxes.is_empty() {
                return Err(Error::input(format!(
                    "category `{}` must not carry boxes",
                    self.category
                )));
            }
            return Ok(());
        }
        let missing: Vec<&str> = self
            .category
            .required_roles()
            .iter()
            .filter(|r| !self.boxes.contains_key(r))
            .map(|r| r.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::input(format!(
                "`{}` banner is missing box(es): {}",
                self.category,
                missing.join(", ")
            )));
        }
        if let (Some(w), Some(h)) = (self.image_width, self.image_height) {
            for (role, b) in &self.boxes {
                if !b.fits(w as usize, h as usize) {
                    return Err(Error::input(format!("{role} box lies outside the {w}x{h} image")));
                }
            }
        } else if !self.boxes.is_empty() {
            return Err(Error::input("boxes present but image dimensions missing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// Position of the task in the export.
    pub index: usize,
    pub task_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub annotations: Vec<BannerAnnotation>,
    pub errors: Vec<RecordError>,
}

#[derive(Debug, Deserialize)]
struct Task {
    data: TaskData,
    #[serde(default)]
    annotations: Vec<TaskAnnotation>,
}

#[derive(Debug, Deserialize)]
struct TaskData {
    #[serde(default)]
    image: Option<String>,
    website_id: String,
    visitor_locale: String,
    #[serde(default)]
    website_eu: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct TaskAnnotation {
    #[serde(default)]
    was_cancelled: bool,
    #[serde(default)]
    result: Vec<ResultItem>,
}

#[derive(Debug, Deserialize)]
struct ResultItem {
    #[serde(default)]
    id: Option<String>,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    from_name: String,
    #[serde(default)]
    original_width: Option<u32>,
    #[serde(default)]
    original_height: Option<u32>,
    value: ResultValue,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ResultValue {
    x: Option<f64>,
    y: Option<f64>,
    width: Option<f64>,
    height: Option<f64>,
    rectanglelabels: Vec<String>,
    choices: Vec<String>,
}

/// Percent coordinate to pixels, rounding half up.
pub fn percent_to_pixels(pct: f64, dim: u32) -> u32 {
    (pct * dim as f64 / 100.0 + 0.5).floor() as u32
}

fn check_percent(v: Option<f64>, what: &str) -> Result<f64> {
    let v = v.ok_or_else(|| Error::input(format!("rectangle without `{what}`")))?;
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::input(format!("`{what}` = {v} is outside [0, 100]")));
    }
    Ok(v)
}

fn parse_task(task: Task, cctlds: &CctldSet) -> Result<BannerAnnotation> {
    let locale: Locale = task.data.visitor_locale.parse()?;
    let website_eu = match task.data.website_eu {
        Some(v) => v,
        None => cctlds.matches(&task.data.website_id)?,
    };
    let ann = task
        .annotations
        .iter()
        .find(|a| !a.was_cancelled)
        .ok_or_else(|| Error::input("task has no completed annotation"))?;

    let mut category = None;
    let mut boxes = BoxSet::new();
    let mut region_roles: BTreeMap<String, Role> = BTreeMap::new();
    let mut region_flags: Vec<(String, Vec<String>)> = Vec::new();
    let mut dims: Option<(u32, u32)> = None;

    for item in &ann.result {
        match (item.kind.as_str(), item.from_name.as_str()) {
            ("rectanglelabels", _) => {
                let (w, h) = match (item.original_width, item.original_height) {
                    (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
                    _ => return Err(Error::input("rectangle without image dimensions")),
                };
                if let Some(prev) = dims {
                    if prev != (w, h) {
                        return Err(Error::input("rectangles disagree on image dimensions"));
                    }
                }
                dims = Some((w, h));
                let v = &item.value;
                let label = match v.rectanglelabels.as_slice() {
                    [one] => one,
                    _ => return Err(Error::input("rectangle must carry exactly one role label")),
                };
                let role: Role = label.parse()?;
                let px = check_percent(v.x, "x")?;
                let py = check_percent(v.y, "y")?;
                let pw = check_percent(v.width, "width")?;
                let ph = check_percent(v.height, "height")?;
                let b = BoundingBox::new(
                    percent_to_pixels(px, w),
                    percent_to_pixels(py, h),
                    percent_to_pixels(pw, w),
                    percent_to_pixels(ph, h),
                )
                .map_err(|_| Error::input(format!("{role} box rounds to zero size")))?;
                if !b.fits(w as usize, h as usize) {
                    return Err(Error::input(format!("{role} box lies outside the {w}x{h} image")));
                }
                if boxes.insert(role, b).is_some() {
                    return Err(Error::input(format!("duplicate `{role}` box")));
                }
                if let Some(id) = &item.id {
                    region_roles.insert(id.clone(), role);
                }
            }
            ("choices", "category") => {
                let label = match item.value.choices.as_slice() {
                    [one] => one,
                    _ => return Err(Error::input("category must be a single choice")),
                };
                if category.replace(label.parse::<Category>()?).is_some() {
                    return Err(Error::input("more than one category"));
                }
            }
            ("choices", "button_flags") => {
                let id = item
                    .id
                    .clone()
                    .ok_or_else(|| Error::input("button_flags without a region id"))?;
                region_flags.push((id, item.value.choices.clone()));
            }
            _ => {}
        }
    }

    let category = category.ok_or_else(|| Error::input("no category chosen"))?;
    let mut flags: BTreeMap<Role, ButtonFlags> = BTreeMap::new();
    for (id, names) in region_flags {
        let role = *region_roles
            .get(&id)
            .ok_or_else(|| Error::input(format!("button_flags refer to unknown region `{id}`")))?;
        let f = flags.entry(role).or_default();
        for n in names {
            match n.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
                "link" => f.link = true,
                "hidden" => f.hidden = true,
                "choice_menu" => f.choice_menu = true,
                "corner" => f.corner = true,
                _ => return Err(Error::input(format!("unknown button flag `{n}`"))),
            }
        }
    }

    let a = BannerAnnotation {
        website_id: task.data.website_id,
        visitor_locale: locale,
        category,
        website_eu,
        image: task.data.image,
        image_width: dims.map(|d| d.0),
        image_height: dims.map(|d| d.1),
        boxes,
        flags,
    };
    a.validate()?;
    Ok(a)
}

fn task_id(v: &Value) -> Option<String> {
    match v.get("id")? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Parse an export. Malformed tasks are reported individually and skipped.
pub fn ingest_str(text: &str, cctlds: &CctldSet) -> Result<IngestReport> {
    let tasks: Vec<Value> = serde_json::from_str(text)?;
    let mut report = IngestReport::default();
    for (index, raw) in tasks.into_iter().enumerate() {
        let tid = task_id(&raw);
        let parsed = serde_json::from_value::<Task>(raw)
            .map_err(|e| Error::input(format!("malformed task: {e}")))
            .and_then(|t| parse_task(t, cctlds));
        match parsed {
            Ok(a) => report.annotations.push(a),
            Err(e) => report.errors.push(RecordError {
                index,
                task_id: tid,
                message: e.to_string(),
            }),
        }
    }
    Ok(report)
}

pub fn ingest_annotations(path: &Path, cctlds: &CctldSet) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, cctlds)
}

fn flag_names(f: &ButtonFlags) -> Vec<&'static str> {
    [
        (f.link, "link"),
        (f.hidden, "hidden"),
        (f.choice_menu, "choice_menu"),
        (f.corner, "corner"),
    ]
    .into_iter()
    .filter(|(on, _)| *on)
    .map(|(_, n)| n)
    .collect()
}

fn to_percent(px: u32, dim: u32) -> f64 {
    px as f64 * 100.0 / dim as f64
}

/// Write annotations back in the export schema.
pub fn emit(annotations: &[BannerAnnotation]) -> Value {
    let tasks: Vec<Value> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut result = vec![json!({
                "type": "choices",
                "from_name": "category",
                "to_name": "image",
                "value": { "choices": [a.category.label()] },
            })];
            let (w, h) = (a.image_width.unwrap_or(0), a.image_height.unwrap_or(0));
            for (role, b) in &a.boxes {
                let id = format!("{role}-{i}");
                result.push(json!({
                    "id": id,
                    "type": "rectanglelabels",
                    "from_name": "role",
                    "to_name": "image",
                    "original_width": w,
                    "original_height": h,
                    "value": {
                        "x": to_percent(b.x, w),
                        "y": to_percent(b.y, h),
                        "width": to_percent(b.w, w),
                        "height": to_percent(b.h, h),
                        "rotation": 0,
                        "rectanglelabels": [role.as_str()],
                    },
                }));
                if let Some(f) = a.flags.get(role) {
                    let names = flag_names(f);
                    if !names.is_empty() {
                        result.push(json!({
                            "id": id,
                            "type": "choices",
                            "from_name": "button_flags",
                            "to_name": "image",
                            "value": { "choices": names },
                        }));
                    }
                }
            }
            let mut data = json!({
                "website_id": a.website_id,
                "visitor_locale": a.visitor_locale.as_str(),
                "website_eu": a.website_eu,
            });
            if let Some(img) = &a.image {
                data["image"] = json!(img);
            }
            json!({ "id": i + 1, "data": data, "annotations": [{ "result": result }] })
        })
        .collect();
    Value::Array(tasks)
}
