//! Row-major 2-D real-valued maps and the resampling/smoothing primitives
//! shared by the feature extractor and the rarity pipeline.
//!
//! Every 1-D primitive here is evaluated so that reversing its input reverses
//! its output bit-for-bit. Left-half outputs are computed from the input,
//! right-half outputs from the reversed input, and an odd middle sample is
//! the average of both. Floating-point sums therefore never depend on scan
//! direction, which keeps the whole pipeline exactly flip-equivariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("grid dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::input(format!(
                "grid data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum whose value does not depend on horizontal or vertical reflection
    /// of the grid: mirrored pixels are combined pairwise before accumulation.
    pub fn symmetric_sum(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut total = 0.0;
        for y in 0..h.div_ceil(2) {
            let yy = h - 1 - y;
            for x in 0..w.div_ceil(2) {
                let xx = w - 1 - x;
                let top = if x == xx {
                    self.get(x, y)
                } else {
                    self.get(x, y) + self.get(xx, y)
                };
                let quad = if y == yy {
                    top
                } else {
                    let bottom = if x == xx {
                        self.get(x, yy)
                    } else {
                        self.get(x, yy) + self.get(xx, yy)
                    };
                    top + bottom
                };
                total += quad;
            }
        }
        total
    }

    pub fn mean(&self) -> f64 {
        self.symmetric_sum() / self.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }

    /// Apply a 1-D operation that maps a row of `in_len` samples to `out_len`
    /// samples along each row.
    fn map_rows(&self, out_len: usize, op: &impl Fn(&[f64], usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(out_len * self.height);
        let mut out = vec![0.0; out_len];
        for y in 0..self.height {
            symmetric_1d(self.row(y), &mut out, op);
            data.extend_from_slice(&out);
        }
        Self {
            width: out_len,
            height: self.height,
            data,
        }
    }

    fn map_cols(&self, out_len: usize, op: &impl Fn(&[f64], usize) -> f64) -> Self {
        let mut data = vec![0.0; self.width * out_len];
        let mut col = vec![0.0; self.height];
        let mut out = vec![0.0; out_len];
        for x in 0..self.width {
            for (y, c) in col.iter_mut().enumerate() {
                *c = self.get(x, y);
            }
            symmetric_1d(&col, &mut out, op);
            for (y, v) in out.iter().enumerate() {
                data[y * self.width + x] = *v;
            }
        }
        Self {
            width: self.width,
            height: out_len,
            data,
        }
    }

    /// Separable Gaussian smoothing with replicated borders.
    pub fn gaussian(&self, sigma: f64) -> Self {
        let kernel = gaussian_kernel(sigma);
        let op = |src: &[f64], i: usize| convolve_symmetric(src, i, &kernel);
        self.map_rows(self.width, &op).map_cols(self.height, &op)
    }

    /// Mean-pool by an integer factor; output dims are `floor(dim / factor)`
    /// (at least one). Blocks are anchored at the nearer edge.
    pub fn mean_pool(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let op = |src: &[f64], i: usize| {
            let start = i * factor;
            let end = (start + factor).min(src.len());
            let sum: f64 = src[start..end].iter().sum();
            sum / (end - start) as f64
        };
        let w = (self.width / factor).max(1);
        let h = (self.height / factor).max(1);
        self.map_rows(w, &op).map_cols(h, &op)
    }

    pub fn resize(&self, width: usize, height: usize, method: Interpolation) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        match method {
            Interpolation::Bilinear => self
                .map_rows(width, &|src, i| bilinear_sample(src, i, width))
                .map_cols(height, &|src, i| bilinear_sample(src, i, height)),
            Interpolation::Nearest => self
                .map_rows(width, &|src, i| nearest_sample(src, i, width))
                .map_cols(height, &|src, i| nearest_sample(src, i, height)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

/// Evaluate `op(src, i)` for every output index so that reversing `src`
/// reverses `out` exactly. `op` must be mirror-consistent in exact arithmetic:
/// `op(rev(src), i) == op(src, n-1-i)`.
fn symmetric_1d(src: &[f64], out: &mut [f64], op: &impl Fn(&[f64], usize) -> f64) {
    let n = out.len();
    let half = n / 2;
    let rev: Vec<f64> = src.iter().rev().copied().collect();
    for i in 0..half {
        out[i] = op(src, i);
        out[n - 1 - i] = op(&rev, i);
    }
    if n % 2 == 1 {
        out[half] = 0.5 * (op(src, half) + op(&rev, half));
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for w in &mut k {
        *w /= total;
    }
    k
}

/// Half-kernel convolution with clamped indices, written as
/// `x[i] + sum_d k[d]*((x[i-d] - x[i]) + (x[i+d] - x[i]))` so that constant
/// signals pass through exactly (the kernel sums to one).
fn convolve_symmetric(src: &[f64], i: usize, half_kernel: &[f64]) -> f64 {
    let last = src.len() as isize - 1;
    let at = |j: isize| src[j.clamp(0, last) as usize];
    let centre = src[i];
    let mut acc = 0.0;
    for (d, w) in half_kernel.iter().enumerate().skip(1) {
        let d = d as isize;
        let i = i as isize;
        acc += w * ((at(i - d) - centre) + (at(i + d) - centre));
    }
    centre + acc
}

/// Half-pixel-centred linear interpolation (`align_corners = false`).
pub(crate) fn bilinear_sample(src: &[f64], i: usize, out_len: usize) -> f64 {
    let n = src.len();
    if n == 1 {
        return src[0];
    }
    let scale = n as f64 / out_len as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    src[lo] * (1.0 - t) + src[hi] * t
}

fn nearest_sample(src: &[f64], i: usize, out_len: usize) -> f64 {
    let n = src.len();
    let pos = ((i as f64 + 0.5) * n as f64 / out_len as f64).floor() as usize;
    src[pos.min(n - 1)]
}
