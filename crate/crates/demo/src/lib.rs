//! Browser bindings: salience map, per-button verdict and a threshold sweep.

use std::collections::BTreeMap;

use banner_salience::saliency::{compute_salience, RarityConfig};
use banner_salience::scoring::{
    contrast_baseline, score_boxes, threshold_grid, threshold_sweep, verdict, BoxSet,
    ButtonSalience, Role, DEFAULT_BASELINE_MARGIN,
};
use banner_salience::features::Backend;
use banner_salience::{Error, Result, SalienceMap, Screenshot};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn map_of(rgba: &[u8], width: usize, height: usize) -> Result<SalienceMap> {
    let img = Screenshot::from_rgba(width, height, rgba, "canvas")?;
    let stack = Backend::default().features(&img)?;
    compute_salience(&stack, width, height, &RarityConfig::default())
}

pub fn salience_gray(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    Ok(map_of(rgba, width, height)?.to_gray8())
}

pub fn analyze_json(rgba: &[u8], width: usize, height: usize, boxes: &str, threshold: f64) -> Result<Value> {
    let boxes: BoxSet = serde_json::from_str(boxes)?;
    let img = Screenshot::from_rgba(width, height, rgba, "canvas")?;
    let map = map_of(rgba, width, height)?;
    let scores = score_boxes(&map, &boxes)?;
    let v = verdict(&scores, threshold)?;
    let has = |r| boxes.contains_key(&r);
    let baseline = if has(Role::Banner) && has(Role::Accept) && has(Role::Reject) {
        Some(contrast_baseline(&img, &boxes, DEFAULT_BASELINE_MARGIN)?)
    } else {
        None
    };
    Ok(json!({ "scores": scores, "verdict": v, "baseline": baseline }))
}

/// Winner of a single banner at each threshold in `[0, max]`.
pub fn sweep_json(scores: &str, max: f64, step: f64) -> Result<Value> {
    let scores: BTreeMap<Role, ButtonSalience> = serde_json::from_str(scores)?;
    let table = threshold_sweep(&[scores], &threshold_grid(0.0, max, step)?)?;
    let points: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            let winner = [(Role::Accept, r.accept), (Role::Reject, r.reject), (Role::Manage, r.manage)]
                .into_iter()
                .find(|(_, share)| *share > 0.0)
                .map(|(role, _)| role);
            json!({ "threshold": r.threshold, "winner": winner })
        })
        .collect();
    Ok(Value::Array(points))
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Grayscale salience map, one byte per pixel.
#[wasm_bindgen(js_name = salienceMap)]
pub fn salience_map(rgba: &[u8], width: usize, height: usize) -> std::result::Result<Vec<u8>, JsError> {
    salience_gray(rgba, width, height).map_err(js)
}

/// Scores, verdict and contrast baseline for boxes given as JSON.
#[wasm_bindgen(js_name = analyzeBoxes)]
pub fn analyze_boxes(
    rgba: &[u8],
    width: usize,
    height: usize,
    boxes: &str,
    threshold: f64,
) -> std::result::Result<String, JsError> {
    analyze_json(rgba, width, height, boxes, threshold)
        .map(|v| v.to_string())
        .map_err(js)
}

#[wasm_bindgen(js_name = sweepCurve)]
pub fn sweep_curve(scores: &str, max: f64, step: f64) -> std::result::Result<String, JsError> {
    sweep_json(scores, max, step).map(|v| v.to_string()).map_err(js)
}
