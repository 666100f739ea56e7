use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use banner_salience::pipeline::RunConfig;
use banner_salience::scoring::{BoxSet, ButtonSalience, Role};
use banner_salience::{Error, Result, Screenshot};
use serde::Serialize;

use crate::Failure;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    toml::from_str(&read(path)?)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn decode_screenshot(path: &Path, source_id: &str) -> Result<Screenshot> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Screenshot::new(w as usize, h as usize, img.into_raw(), source_id)
}

pub fn load_screenshot(path: &Path) -> Result<Screenshot, Failure> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_screenshot(path, &id)?)
}

/// `{"banner": {"x":..,"y":..,"w":..,"h":..}, "accept": {...}, ...}`
pub fn load_boxes(path: &Path) -> Result<BoxSet, Failure> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Either full button records or bare combined scores per role.
pub fn load_scores(path: &Path) -> Result<BTreeMap<Role, ButtonSalience>, Failure> {
    let text = read(path)?;
    if let Ok(full) = serde_json::from_str::<BTreeMap<Role, ButtonSalience>>(&text) {
        return Ok(full);
    }
    let bare: BTreeMap<Role, f64> = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(bare
        .into_iter()
        .map(|(role, combined)| {
            (
                role,
                ButtonSalience {
                    role,
                    avg: f64::NAN,
                    max: f64::NAN,
                    combined,
                },
            )
        })
        .collect())
}

/// Items as rows, raters as columns, empty cells missing. Returned rater-major.
pub fn load_ratings(path: &Path) -> Result<Vec<Vec<Option<String>>>, Failure> {
    let text = read(path)?;
    let rows: Vec<Vec<Option<String>>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    let c = c.trim();
                    (!c.is_empty()).then(|| c.to_owned())
                })
                .collect()
        })
        .collect();
    let raters = rows.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..raters)
        .map(|r| rows.iter().map(|row| row.get(r).cloned().flatten()).collect())
        .collect())
}

pub fn write_text(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_json<T: Serialize>(out: Option<&PathBuf>, v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(Error::from)? + "\n";
    write_text(out, &text)
}
