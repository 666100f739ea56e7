//! Seeded perturbation ensemble.
//!
//! Each sample independently applies five transforms (shift, horizontal
//! flip, vertical flip, colour jitter, Gaussian blur), each with the same
//! firing probability. Geometric transforms are mirrored onto the bounding
//! boxes; photometric ones leave boxes alone. Button scores are averaged
//! over the ensemble.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Screenshot;
use crate::scoring::{BoundingBox, BoxSet, ButtonSalience, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub ensemble_size: usize,
    pub max_shift: u32,
    pub jitter_fraction: f64,
    pub blur_kernel: usize,
    pub blur_sigma_max: f64,
    pub per_transform_probability: f64,
    pub master_seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 32,
            max_shift: 15,
            jitter_fraction: 0.02,
            blur_kernel: 3,
            blur_sigma_max: 0.02,
            per_transform_probability: 0.5,
            master_seed: 0,
        }
    }
}

impl PerturbationConfig {
    /// Configuration that reproduces the unperturbed image once.
    pub fn disabled() -> Self {
        Self {
            ensemble_size: 1,
            per_transform_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::input("ensemble_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.per_transform_probability) {
            return Err(Error::input("per_transform_probability must lie in [0, 1]"));
        }
        if self.blur_kernel.is_multiple_of(2) {
            return Err(Error::input("blur_kernel must be odd"));
        }
        if !(self.jitter_fraction >= 0.0) || !(self.blur_sigma_max > 0.0) {
            return Err(Error::input("jitter_fraction must be >= 0 and blur_sigma_max > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of the hue wheel.
    pub hue: f64,
}

/// Which transforms fired and with what parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AppliedTransforms {
    pub shift: Option<(i32, i32)>,
    pub hflip: bool,
    pub vflip: bool,
    pub jitter: Option<ColorJitter>,
    pub blur_sigma: Option<f64>,
}

impl AppliedTransforms {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSample {
    pub image: Screenshot,
    pub boxes: BoxSet,
    pub applied: AppliedTransforms,
}

/// 32-byte ChaCha seed for one ensemble member, derived from
/// SHA-256(`"perturb"` || seed LE || id length LE || id || index LE).
pub fn sample_seed(master_seed: u64, source_id: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"perturb");
    h.update(master_seed.to_le_bytes());
    h.update((source_id.len() as u64).to_le_bytes());
    h.update(source_id.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Draw the transform parameters for one sample. Firing decisions are drawn
/// first, in transform order, then parameters for the transforms that fired.
pub fn draw_transforms(cfg: &PerturbationConfig, source_id: &str, index: u64) -> AppliedTransforms {
    let mut rng = ChaCha8Rng::from_seed(sample_seed(cfg.master_seed, source_id, index));
    let p = cfg.per_transform_probability;
    let fired: [bool; 5] = std::array::from_fn(|_| rng.random::<f64>() < p);
    let mut applied = AppliedTransforms::default();
    if fired[0] {
        let m = cfg.max_shift as i32;
        applied.shift = Some((rng.random_range(-m..=m), rng.random_range(-m..=m)));
    }
    applied.hflip = fired[1];
    applied.vflip = fired[2];
    if fired[3] {
        let j = cfg.jitter_fraction;
        let mut factor = || 1.0 + rng.random_range(-j..=j);
        let brightness = factor();
        let contrast = factor();
        let saturation = factor();
        applied.jitter = Some(ColorJitter {
            brightness,
            contrast,
            saturation,
            hue: rng.random_range(-j..=j),
        });
    }
    if fired[4] {
        // (0, max]
        applied.blur_sigma = Some(cfg.blur_sigma_max * (1.0 - rng.random::<f64>()));
    }
    applied
}

fn shift_box(b: &BoundingBox, dx: i32, dy: i32, width: usize, height: usize) -> BoundingBox {
    let clamp = |pos: u32, d: i32, size: u32, limit: usize| {
        (pos as i64 + d as i64).clamp(0, limit as i64 - size as i64) as u32
    };
    BoundingBox {
        x: clamp(b.x, dx, b.w, width),
        y: clamp(b.y, dy, b.h, height),
        w: b.w,
        h: b.h,
    }
}

pub fn hflip_box(b: &BoundingBox, width: usize) -> BoundingBox {
    BoundingBox {
        x: width as u32 - b.x - b.w,
        ..*b
    }
}

pub fn vflip_box(b: &BoundingBox, height: usize) -> BoundingBox {
    BoundingBox {
        y: height as u32 - b.y - b.h,
        ..*b
    }
}

/// Translate content by `(dx, dy)`, replicating edge pixels into the gap.
pub fn shift_image(img: &Screenshot, dx: i32, dy: i32) -> Screenshot {
    let (w, h) = (img.width() as i64, img.height() as i64);
    img.remap(|x, y| {
        let sx = (x as i64 - dx as i64).clamp(0, w - 1) as usize;
        let sy = (y as i64 - dy as i64).clamp(0, h - 1) as usize;
        (sx, sy)
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u8 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, contrast, saturation then hue, on [0, 1] channels.
pub fn color_jitter(img: &Screenshot, j: &ColorJitter) -> Screenshot {
    let mut px: Vec<[f64; 3]> = img
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            [p[0], p[1], p[2]].map(|v| (v as f64 / 255.0 * j.brightness).clamp(0.0, 1.0))
        })
        .collect();
    let mean = px.iter().map(|p| gray(p[0], p[1], p[2])).sum::<f64>() / px.len() as f64;
    for p in &mut px {
        *p = p.map(|v| ((v - mean) * j.contrast + mean).clamp(0.0, 1.0));
        let g = gray(p[0], p[1], p[2]);
        *p = p.map(|v| ((v - g) * j.saturation + g).clamp(0.0, 1.0));
        if j.hue != 0.0 {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            let (r, g, b) = hsv_to_rgb(h + j.hue, s, v);
            *p = [r, g, b];
        }
    }
    let pixels = px
        .iter()
        .flat_map(|p| p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    img.with_pixels(pixels)
}

/// Convolve with a normalised `kernel x kernel` Gaussian, borders replicated.
pub fn gaussian_blur(img: &Screenshot, kernel: usize, sigma: f64) -> Screenshot {
    let r = (kernel / 2) as i64;
    let weights: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.pixels();
    let pass = |data: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (k, wt) in weights.iter().enumerate() {
                        let d = k as i64 - r;
                        let (sx, sy) = if horizontal {
                            ((x + d).clamp(0, w - 1), y)
                        } else {
                            (x, (y + d).clamp(0, h - 1))
                        };
                        acc += wt * data[((sy * w + sx) * 3 + c as i64) as usize];
                    }
                    out[((y * w + x) * 3 + c as i64) as usize] = acc;
                }
            }
        }
        out
    };
    let data: Vec<f64> = src.iter().map(|&v| v as f64).collect();
    let blurred = pass(&pass(&data, true), false);
    img.with_pixels(
        blurred
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

/// Apply an already-drawn set of transforms.
pub fn apply_transforms(
    img: &Screenshot,
    boxes: &BoxSet,
    applied: &AppliedTransforms,
    blur_kernel: usize,
) -> PerturbedSample {
    let (w, h) = (img.width(), img.height());
    let mut image = img.clone();
    let mut boxes = boxes.clone();
    if let Some((dx, dy)) = applied.shift {
        image = shift_image(&image, dx, dy);
        for b in boxes.values_mut() {
            *b = shift_box(b, dx, dy, w, h);
        }
    }
    if applied.hflip {
        image = image.flip_horizontal();
        for b in boxes.values_mut() {
            *b = hflip_box(b, w);
        }
    }
    if applied.vflip {
        image = image.flip_vertical();
        for b in boxes.values_mut() {
            *b = vflip_box(b, h);
        }
    }
    if let Some(j) = &applied.jitter {
        image = color_jitter(&image, j);
    }
    if let Some(sigma) = applied.blur_sigma {
        image = gaussian_blur(&image, blur_kernel, sigma);
    }
    PerturbedSample {
        image,
        boxes,
        applied: *applied,
    }
}

pub fn sample_perturbation(
    img: &Screenshot,
    boxes: &BoxSet,
    cfg: &PerturbationConfig,
    index: u64,
) -> Result<PerturbedSample> {
    cfg.validate()?;
    if let Some((role, b)) = boxes.iter().find(|(_, b)| !b.fits(img.width(), img.height())) {
        return Err(Error::input(format!("{role} box {b:?} lies outside the image")));
    }
    let applied = draw_transforms(cfg, img.source_id(), index);
    Ok(apply_transforms(img, boxes, &applied, cfg.blur_kernel))
}

/// Mean of per-sample button scores over the ensemble, per role.
pub fn ensemble_scores<F>(
    img: &Screenshot,
    boxes: &BoxSet,
    cfg: &PerturbationConfig,
    scorer: F,
) -> Result<BTreeMap<Role, ButtonSalience>>
where
    F: Fn(&Screenshot, &BoxSet) -> Result<BTreeMap<Role, ButtonSalience>> + Sync,
{
    cfg.validate()?;
    let run = |i: usize| -> Result<BTreeMap<Role, ButtonSalience>> {
        let s = sample_perturbation(img, boxes, cfg, i as u64)?;
        scorer(&s.image, &s.boxes)
    };
    #[cfg(feature = "parallel")]
    let per_sample: Vec<BTreeMap<Role, ButtonSalience>> = {
        use rayon::prelude::*;
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_sample: Vec<BTreeMap<Role, ButtonSalience>> =
        (0..cfg.ensemble_size).map(run).collect::<Result<_>>()?;
    Ok(average_scores(&per_sample))
}

/// Per-role arithmetic mean, summed in sample order as offsets from the
/// first sample so that identical samples average to themselves exactly.
pub fn average_scores(samples: &[BTreeMap<Role, ButtonSalience>]) -> BTreeMap<Role, ButtonSalience> {
    let mut acc: BTreeMap<Role, (ButtonSalience, [f64; 3], usize)> = BTreeMap::new();
    for s in samples {
        for (role, b) in s {
            let e = acc.entry(*role).or_insert((*b, [0.0; 3], 0));
            e.1[0] += b.avg - e.0.avg;
            e.1[1] += b.max - e.0.max;
            e.1[2] += b.combined - e.0.combined;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(role, (first, d, n))| {
            let n = n as f64;
            (
                role,
                ButtonSalience {
                    role,
                    avg: first.avg + d[0] / n,
                    max: first.max + d[1] / n,
                    combined: first.combined + d[2] / n,
                },
            )
        })
        .collect()
}
