//! Rarity-based bottom-up salience.
//!
//! A feature stack is reduced to a per-pixel salience map in four passes:
//! per-channel histogram rarity, fusion of the channels of each layer,
//! fusion of the layers of each block, and a sum of the five block maps at
//! image resolution followed by min-max normalisation to [0, 255].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Interpolation};

pub const BLOCK_COUNT: u8 = 5;
pub const MAX_LAYER_INDEX: u8 = 13;

/// Channel count of each of the 13 deep-backend layers.
pub const DEEP_CHANNELS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
/// Block membership of each of the 13 deep-backend layers.
pub const DEEP_BLOCKS: [u8; 13] = [1, 1, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMaps {
    pub block_index: u8,
    pub layer_index: u8,
    pub channels: Vec<Grid>,
}

impl LayerMaps {
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.channels.first().map(Grid::dims)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMapStack {
    pub layers: Vec<LayerMaps>,
}

impl FeatureMapStack {
    pub fn new(layers: Vec<LayerMaps>) -> Result<Self> {
        let stack = Self { layers };
        stack.validate()?;
        Ok(stack)
    }

    /// Structural checks shared by every backend.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<(u8, u8)> = None;
        for layer in &self.layers {
            if !(1..=BLOCK_COUNT).contains(&layer.block_index)
                || !(1..=MAX_LAYER_INDEX).contains(&layer.layer_index)
            {
                return Err(Error::input(format!(
                    "layer {} / block {} out of range",
                    layer.layer_index, layer.block_index
                )));
            }
            if let Some((pb, pl)) = prev {
                if layer.layer_index <= pl || layer.block_index < pb {
                    return Err(Error::input("layers must be ordered by layer index with non-decreasing blocks"));
                }
            }
            prev = Some((layer.block_index, layer.layer_index));
            let dims = layer
                .dims()
                .ok_or_else(|| Error::input(format!("layer {} has no channels", layer.layer_index)))?;
            if layer.channels.iter().any(|c| c.dims() != dims) {
                return Err(Error::input(format!(
                    "layer {} mixes channel dimensions",
                    layer.layer_index
                )));
            }
        }
        for b in 1..=BLOCK_COUNT {
            if !self.layers.iter().any(|l| l.block_index == b) {
                return Err(Error::input(format!("block {b} is missing")));
            }
        }
        Ok(())
    }

    /// Whether the stack has the 13-layer deep-network layout.
    pub fn is_deep_layout(&self) -> bool {
        self.layers.len() == 13
            && self.layers.iter().enumerate().all(|(i, l)| {
                l.block_index == DEEP_BLOCKS[i] && l.channels.len() == DEEP_CHANNELS[i]
            })
    }

    pub fn flip_horizontal(&self) -> Self {
        self.map_channels(Grid::flip_horizontal)
    }

    pub fn flip_vertical(&self) -> Self {
        self.map_channels(Grid::flip_vertical)
    }

    fn map_channels(&self, f: impl Fn(&Grid) -> Grid) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerMaps {
                    block_index: l.block_index,
                    layer_index: l.layer_index,
                    channels: l.channels.iter().map(&f).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RarityConfig {
    pub bin_count: usize,
    pub weight_normalization: bool,
    pub upsample_method: Interpolation,
}

impl Default for RarityConfig {
    fn default() -> Self {
        Self {
            bin_count: 10,
            weight_normalization: true,
            upsample_method: Interpolation::Bilinear,
        }
    }
}

impl RarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_count < 2 {
            return Err(Error::input("bin_count must be at least 2"));
        }
        Ok(())
    }
}

/// Per-pixel salience in [0, 255], aligned with the source screenshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMap {
    scores: Grid,
}

impl SalienceMap {
    /// Wrap an existing score grid. Values must already lie in [0, 255].
    pub fn from_grid(scores: Grid) -> Result<Self> {
        if scores.data().iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::input("salience scores must lie in [0, 255]"));
        }
        Ok(Self { scores })
    }

    pub fn width(&self) -> usize {
        self.scores.width()
    }

    pub fn height(&self) -> usize {
        self.scores.height()
    }

    pub fn scores(&self) -> &Grid {
        &self.scores
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.scores.get(x, y)
    }

    /// 8-bit grayscale rendering, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.scores
            .data()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Bin index of `v` among `bins` equal-width intervals over `[min, max]`.
/// Values on an interior boundary go to the higher bin; `max` goes to the
/// last bin.
#[inline]
fn bin_of(v: f64, min: f64, range: f64, bins: usize) -> usize {
    if range <= 0.0 {
        return 0;
    }
    let idx = ((v - min) / range * bins as f64).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

/// Replace every pixel with `-ln p`, where `p` is the fraction of the
/// channel's pixels that share its histogram bin.
pub fn rarity_map(channel: &Grid, cfg: &RarityConfig) -> Result<Grid> {
    cfg.validate()?;
    if channel.is_empty() {
        return Err(Error::input("empty channel"));
    }
    if channel.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::input("channel contains non-finite values"));
    }
    let bins = cfg.bin_count;
    let (min, max) = (channel.min(), channel.max());
    let range = max - min;
    let idx: Vec<usize> = channel
        .data()
        .iter()
        .map(|&v| bin_of(v, min, range, bins))
        .collect();
    let mut counts = vec![0usize; bins];
    for &i in &idx {
        counts[i] += 1;
    }
    let n = channel.len() as f64;
    let rarity: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { -(c as f64 / n).ln() })
        .collect();
    Grid::new(
        channel.width(),
        channel.height(),
        idx.into_iter().map(|i| rarity[i]).collect(),
    )
}

/// Fusion weight of one map: squared gap between its max and mean.
pub fn fusion_weight(map: &Grid) -> f64 {
    let gap = map.max() - map.mean();
    // Constant maps have max == mean only up to rounding of the mean.
    if map.min() == map.max() {
        0.0
    } else {
        gap * gap
    }
}

/// Weighted sum of equally-sized maps with weights `(max - mean)^2`.
pub fn fuse_layer(maps: &[Grid], cfg: &RarityConfig) -> Result<Grid> {
    let first = maps.first().ok_or_else(|| Error::input("nothing to fuse"))?;
    let dims = first.dims();
    if let Some(bad) = maps.iter().find(|m| m.dims() != dims) {
        return Err(Error::input(format!(
            "cannot fuse maps of {:?} and {:?}",
            dims,
            bad.dims()
        )));
    }
    let mut weights: Vec<f64> = maps.iter().map(fusion_weight).collect();
    if cfg.weight_normalization {
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Ok(Grid::filled(dims.0, dims.1, 0.0));
        }
        for w in &mut weights {
            *w /= total;
        }
    }
    let mut out = vec![0.0; first.len()];
    for (map, &w) in maps.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(map.data()) {
            *o += w * v;
        }
    }
    Grid::new(dims.0, dims.1, out)
}

/// Fuse the per-layer maps of one block, first bringing them to the size of
/// the largest map in the block.
pub fn fuse_block(layer_maps: &[Grid], cfg: &RarityConfig) -> Result<Grid> {
    let largest = layer_maps
        .iter()
        .max_by_key(|m| m.len())
        .ok_or_else(|| Error::input("nothing to fuse"))?;
    let (w, h) = largest.dims();
    let aligned: Vec<Grid> = layer_maps
        .iter()
        .map(|m| m.resize(w, h, cfg.upsample_method))
        .collect();
    fuse_layer(&aligned, cfg)
}

/// Rarity and channel fusion for one layer.
pub fn layer_salience(layer: &LayerMaps, cfg: &RarityConfig) -> Result<Grid> {
    #[cfg(feature = "parallel")]
    let rarities: Result<Vec<Grid>> = {
        use rayon::prelude::*;
        layer
            .channels
            .par_iter()
            .map(|c| rarity_map(c, cfg))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rarities: Result<Vec<Grid>> = layer.channels.iter().map(|c| rarity_map(c, cfg)).collect();
    fuse_layer(&rarities?, cfg)
}

/// The five block maps, each at its own native resolution.
pub fn block_maps(stack: &FeatureMapStack, cfg: &RarityConfig) -> Result<Vec<Grid>> {
    cfg.validate()?;
    stack.validate()?;
    let layer_maps: Vec<(u8, Grid)> = stack
        .layers
        .iter()
        .map(|l| layer_salience(l, cfg).map(|g| (l.block_index, g)))
        .collect::<Result<_>>()?;
    (1..=BLOCK_COUNT)
        .map(|b| {
            let in_block: Vec<Grid> = layer_maps
                .iter()
                .filter(|(bi, _)| *bi == b)
                .map(|(_, g)| g.clone())
                .collect();
            fuse_block(&in_block, cfg)
        })
        .collect()
}

/// Linearly rescale to [0, 255]; a constant grid becomes all zeros.
pub fn normalize_to_255(sum: &Grid) -> Grid {
    let (min, max) = (sum.min(), sum.max());
    let range = max - min;
    if range <= 0.0 || !range.is_finite() {
        return Grid::filled(sum.width(), sum.height(), 0.0);
    }
    let data = sum
        .data()
        .iter()
        .map(|v| ((v - min) / range * 255.0).clamp(0.0, 255.0))
        .collect();
    Grid::new(sum.width(), sum.height(), data).expect("same dims")
}

pub fn compute_salience(
    stack: &FeatureMapStack,
    target_w: usize,
    target_h: usize,
    cfg: &RarityConfig,
) -> Result<SalienceMap> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::input("target dimensions must be positive"));
    }
    let blocks = block_maps(stack, cfg)?;
    let mut sum = vec![0.0; target_w * target_h];
    for block in &blocks {
        let up = block.resize(target_w, target_h, cfg.upsample_method);
        for (s, v) in sum.iter_mut().zip(up.data()) {
            *s += v;
        }
    }
    let sum = Grid::new(target_w, target_h, sum)?;
    Ok(SalienceMap {
        scores: normalize_to_255(&sum),
    })
}
