use std::io::Write;
use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};

/// Single-channel floating point raster, row-major, intensities nominally in
/// `[0, 1]`. Pixel `(x, y)` has its center at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
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

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} raster needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample. Points outside `[0, w-1] x [0, h-1]` are clamped to
    /// the border; the second value reports whether clamping happened.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, bool) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let outside = !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y);
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy, outside)
    }

    /// Converts a decoded image to gray in `[0, 1]`. Color inputs use the
    /// ITU-R BT.601 luma weights.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Self {
                    width: w as usize,
                    height: h as usize,
                    data: g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
                }
            }
            DynamicImage::ImageLuma16(g) => {
                let (w, h) = g.dimensions();
                Self {
                    width: w as usize,
                    height: h as usize,
                    data: g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb
                    .pixels()
                    .map(|p| {
                        let [r, g, b] = p.0;
                        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
                    })
                    .collect();
                Self {
                    width: w as usize,
                    height: h as usize,
                    data,
                }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    /// Binary PGM (P5, maxval 255). Values are clamped to `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}
