use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MIN_SIDE: usize = 32;

/// Decoded 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Screenshot {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    source_id: String,
}

impl Screenshot {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::input(format!(
                "screenshot is {width}x{height}, minimum is {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::input(format!(
                "expected {} RGB bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_id: source_id.into(),
        })
    }

    /// Build from an RGBA buffer, dropping alpha.
    pub fn from_rgba(
        width: usize,
        height: usize,
        rgba: &[u8],
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::input("RGBA buffer length does not match dimensions"));
        }
        let pixels = rgba
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect();
        Self::new(width, height, pixels, source_id)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        source_id: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels, source_id)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            width: self.width,
            height: self.height,
            pixels,
            source_id: self.source_id.clone(),
        }
    }

    pub fn channel(&self, c: usize) -> Grid {
        Grid::from_fn(self.width, self.height, |x, y| {
            self.pixels[(y * self.width + x) * 3 + c] as f64
        })
    }

    /// Rec. 601 luma in [0, 255].
    pub fn luma(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |x, y| {
            let [r, g, b] = self.pixel(x, y);
            luma(r, g, b)
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        self.remap(|x, y| (self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        self.remap(|x, y| (x, self.height - 1 - y))
    }

    /// Build a same-sized image where pixel (x, y) is read from `src(x, y)`.
    pub(crate) fn remap(&self, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = src(x, y);
                pixels.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        self.with_pixels(pixels)
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_images() {
        assert!(Screenshot::new(31, 40, vec![0; 31 * 40 * 3], "x").is_err());
        assert!(Screenshot::new(32, 32, vec![0; 32 * 32 * 3], "x").is_ok());
        assert!(Screenshot::new(32, 32, vec![0; 10], "x").is_err());
    }

    #[test]
    fn flips_are_involutions() {
        let img = Screenshot::from_fn(40, 33, "t", |x, y| [x as u8, y as u8, (x * y) as u8]).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 5), img.pixel(39, 5));
    }

    #[test]
    fn rgba_drops_alpha() {
        let rgba: Vec<u8> = (0..32 * 32).flat_map(|_| [1, 2, 3, 255]).collect();
        let img = Screenshot::from_rgba(32, 32, &rgba, "a").unwrap();
        assert_eq!(img.pixel(5, 5), [1, 2, 3]);
    }
}
