//! Feature backends: a deterministic multi-scale filter bank, and the FMAP
//! container carrying deep-network activations produced out of process.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FmapError, Result};
use crate::grid::Grid;
use crate::image::Screenshot;
use crate::saliency::{FeatureMapStack, LayerMaps, BLOCK_COUNT, MAX_LAYER_INDEX};

/// Channel recipes evaluated at every scale, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    SmoothedRed,
    SmoothedGreen,
    SmoothedBlue,
    SmoothedLuma,
    HorizontalEdge,
    VerticalEdge,
    DifferenceOfGaussians,
}

pub const RECIPES_V1: [Recipe; 7] = [
    Recipe::SmoothedRed,
    Recipe::SmoothedGreen,
    Recipe::SmoothedBlue,
    Recipe::SmoothedLuma,
    Recipe::HorizontalEdge,
    Recipe::VerticalEdge,
    Recipe::DifferenceOfGaussians,
];

/// Versioned description of the filter bank.
///
/// Block `b` (1-based) works on the image mean-pooled by `2^(b-1)`, then
/// smooths with `sigma = 2^(b-1)/2` full-resolution pixels, i.e. 0.5 pooled
/// pixels. The DoG channel subtracts a second smoothing at twice that sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    pub version: u32,
    pub recipes: Vec<Recipe>,
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        Self {
            version: 1,
            recipes: RECIPES_V1.to_vec(),
        }
    }
}

impl FilterBankSpec {
    pub fn downsample_factor(block: u8) -> usize {
        1 << (block - 1)
    }

    /// Smoothing sigma in full-resolution pixels.
    pub fn sigma(block: u8) -> f64 {
        Self::downsample_factor(block) as f64 / 2.0
    }
}

/// Sobel x-derivative magnitude: `|2 d(y) + (d(y-1) + d(y+1))|` with
/// `d = v(x+1) - v(x-1)`, borders replicated.
pub fn sobel_horizontal(g: &Grid) -> Grid {
    let (w, h) = g.dims();
    let at = |x: isize, y: isize| {
        g.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
        )
    };
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let d = |yy: isize| at(x + 1, yy) - at(x - 1, yy);
        (2.0 * d(y) + (d(y - 1) + d(y + 1))).abs()
    })
}

/// Sobel y-derivative magnitude.
pub fn sobel_vertical(g: &Grid) -> Grid {
    let (w, h) = g.dims();
    let at = |x: isize, y: isize| {
        g.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
        )
    };
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let d = |xx: isize| at(xx, y + 1) - at(xx, y - 1);
        (2.0 * d(x) + (d(x - 1) + d(x + 1))).abs()
    })
}

pub fn extract_filter_bank(img: &Screenshot, spec: &FilterBankSpec) -> Result<FeatureMapStack> {
    if img.width() < crate::image::MIN_SIDE || img.height() < crate::image::MIN_SIDE {
        return Err(Error::input("image smaller than 32x32"));
    }
    if spec.recipes.is_empty() {
        return Err(Error::input("filter bank has no recipes"));
    }
    let planes = [img.channel(0), img.channel(1), img.channel(2), img.luma()];
    let pooled_sigma = 0.5;
    let layers = (1..=BLOCK_COUNT)
        .map(|block| {
            let factor = FilterBankSpec::downsample_factor(block);
            let pooled: Vec<Grid> = planes.iter().map(|p| p.mean_pool(factor)).collect();
            let smooth: Vec<Grid> = pooled.iter().map(|p| p.gaussian(pooled_sigma)).collect();
            let channels = spec
                .recipes
                .iter()
                .map(|r| match r {
                    Recipe::SmoothedRed => smooth[0].clone(),
                    Recipe::SmoothedGreen => smooth[1].clone(),
                    Recipe::SmoothedBlue => smooth[2].clone(),
                    Recipe::SmoothedLuma => smooth[3].clone(),
                    Recipe::HorizontalEdge => sobel_horizontal(&smooth[3]),
                    Recipe::VerticalEdge => sobel_vertical(&smooth[3]),
                    Recipe::DifferenceOfGaussians => {
                        let wide = pooled[3].gaussian(2.0 * pooled_sigma);
                        let data = smooth[3]
                            .data()
                            .iter()
                            .zip(wide.data())
                            .map(|(a, b)| (a - b).abs())
                            .collect();
                        Grid::new(wide.width(), wide.height(), data).expect("same dims")
                    }
                })
                .collect();
            LayerMaps {
                block_index: block,
                layer_index: block,
                channels,
            }
        })
        .collect();
    FeatureMapStack::new(layers)
}

pub const FMAP_MAGIC: &[u8; 6] = b"FMAPv1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub block_index: u8,
    pub layer_index: u8,
    /// `[channels, height, width]`
    pub shape: [usize; 3],
    pub dtype: String,
}

impl TensorDescriptor {
    fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// In-memory image of an FMAP file.
///
/// Layout: the 6-byte magic `FMAPv1`, a little-endian `u32` header length,
/// that many bytes of UTF-8 JSON (an array of [`TensorDescriptor`]), then
/// each tensor's `f32` values little-endian and row-major, in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct FmapContainer {
    header: String,
    descriptors: Vec<TensorDescriptor>,
    data: Vec<Vec<f32>>,
}

impl FmapContainer {
    pub fn new(tensors: Vec<(TensorDescriptor, Vec<f32>)>) -> Result<Self, FmapError> {
        let (descriptors, data): (Vec<_>, Vec<_>) = tensors.into_iter().unzip();
        validate_descriptors(&descriptors)?;
        for (d, v) in descriptors.iter().zip(&data) {
            if d.element_count() != v.len() {
                return Err(FmapError::BadShape {
                    name: d.name.clone(),
                    shape: d.shape.to_vec(),
                });
            }
        }
        let header =
            serde_json::to_string(&descriptors).map_err(|e| FmapError::Header(e.to_string()))?;
        Ok(Self {
            header,
            descriptors,
            data,
        })
    }

    /// Wrap a feature stack, one tensor per layer.
    pub fn from_stack(stack: &FeatureMapStack) -> Result<Self, FmapError> {
        let tensors = stack
            .layers
            .iter()
            .map(|l| {
                let (w, h) = l.dims().unwrap_or((0, 0));
                let values = l
                    .channels
                    .iter()
                    .flat_map(|c| c.data().iter().map(|&v| v as f32))
                    .collect();
                let d = TensorDescriptor {
                    name: format!("layer{}", l.layer_index),
                    block_index: l.block_index,
                    layer_index: l.layer_index,
                    shape: [l.channels.len(), h, w],
                    dtype: "f32le".into(),
                };
                (d, values)
            })
            .collect();
        Self::new(tensors)
    }

    pub fn descriptors(&self) -> &[TensorDescriptor] {
        &self.descriptors
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FmapError> {
        if bytes.len() < FMAP_MAGIC.len() || &bytes[..6] != FMAP_MAGIC {
            return Err(if bytes.len() < 6 && FMAP_MAGIC.starts_with(bytes) {
                FmapError::Truncated {
                    needed: 10,
                    found: bytes.len(),
                }
            } else {
                FmapError::BadMagic
            });
        }
        if bytes.len() < 10 {
            return Err(FmapError::Truncated {
                needed: 10,
                found: bytes.len(),
            });
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header_end = 10 + header_len;
        if bytes.len() < header_end {
            return Err(FmapError::Truncated {
                needed: header_end,
                found: bytes.len(),
            });
        }
        let header = std::str::from_utf8(&bytes[10..header_end])
            .map_err(|e| FmapError::Header(e.to_string()))?
            .to_owned();
        let descriptors: Vec<TensorDescriptor> =
            serde_json::from_str(&header).map_err(|e| FmapError::Header(e.to_string()))?;
        validate_descriptors(&descriptors)?;

        let declared: usize = descriptors.iter().map(|d| d.element_count() * 4).sum();
        let payload = &bytes[header_end..];
        if payload.len() < declared {
            return Err(FmapError::Truncated {
                needed: header_end + declared,
                found: bytes.len(),
            });
        }
        if payload.len() != declared {
            return Err(FmapError::ByteCountMismatch {
                declared,
                found: payload.len(),
            });
        }
        let mut offset = 0;
        let data = descriptors
            .iter()
            .map(|d| {
                let n = d.element_count();
                let chunk = &payload[offset..offset + n * 4];
                offset += n * 4;
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        Ok(Self {
            header,
            descriptors,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.data.iter().map(|d| d.len() * 4).sum();
        let mut out = Vec::with_capacity(10 + self.header.len() + payload);
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        for tensor in &self.data {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_stack(&self) -> Result<FeatureMapStack> {
        let layers = self
            .descriptors
            .iter()
            .zip(&self.data)
            .map(|(d, values)| {
                let [c, h, w] = d.shape;
                let plane = h * w;
                let channels = (0..c)
                    .map(|i| {
                        let v = values[i * plane..(i + 1) * plane]
                            .iter()
                            .map(|&x| x as f64)
                            .collect();
                        Grid::new(w, h, v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LayerMaps {
                    block_index: d.block_index,
                    layer_index: d.layer_index,
                    channels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMapStack::new(layers)
    }
}

fn validate_descriptors(descriptors: &[TensorDescriptor]) -> Result<(), FmapError> {
    let mut prev: Option<&TensorDescriptor> = None;
    for d in descriptors {
        if d.dtype != "f32le" {
            return Err(FmapError::UnsupportedDtype {
                name: d.name.clone(),
                dtype: d.dtype.clone(),
            });
        }
        if !(1..=BLOCK_COUNT).contains(&d.block_index) || !(1..=MAX_LAYER_INDEX).contains(&d.layer_index) {
            return Err(FmapError::IndexOutOfRange { name: d.name.clone() });
        }
        if d.shape.contains(&0) {
            return Err(FmapError::BadShape {
                name: d.name.clone(),
                shape: d.shape.to_vec(),
            });
        }
        if let Some(p) = prev {
            if d.layer_index <= p.layer_index || d.block_index < p.block_index {
                return Err(FmapError::NonMonotone { name: d.name.clone() });
            }
        }
        prev = Some(d);
    }
    Ok(())
}

/// Read and validate an FMAP file.
pub fn load_fmap_container(path: &Path) -> Result<FmapContainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FmapContainer::decode(&bytes)?)
}

pub fn load_fmap(path: &Path) -> Result<FeatureMapStack> {
    load_fmap_container(path)?.to_stack()
}

pub fn write_fmap(path: &Path, container: &FmapContainer) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&container.encode()).map_err(|e| Error::io(path, e))
}

/// Where feature stacks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    FilterBank(FilterBankSpec),
    /// Path template with a `{id}` placeholder replaced by the source id.
    Fmap { template: String },
}

impl Default for Backend {
    fn default() -> Self {
        Backend::FilterBank(FilterBankSpec::default())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    /// Parses `filterbank` or `fmap:<path-template>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "filterbank" {
            Ok(Backend::default())
        } else if let Some(t) = s.strip_prefix("fmap:") {
            if t.is_empty() {
                return Err(Error::input("fmap backend needs a path template"));
            }
            Ok(Backend::Fmap { template: t.into() })
        } else {
            Err(Error::input(format!("unknown backend `{s}`")))
        }
    }
}

impl Backend {
    pub fn supports_perturbation(&self) -> bool {
        matches!(self, Backend::FilterBank(_))
    }

    pub fn features(&self, img: &Screenshot) -> Result<FeatureMapStack> {
        match self {
            Backend::FilterBank(spec) => extract_filter_bank(img, spec),
            Backend::Fmap { template } => {
                let path = template.replace("{id}", img.source_id());
                load_fmap(Path::new(&path))
            }
        }
    }
}
