//! Equirectangular panoramas: storage, sampling, resampling under rotation
//! and 8-bit file I/O.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::sphere::{
    direction_to_equirect_unchecked, equirect_to_direction_unchecked, Direction, RotationSO3,
};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Panorama with a scalar intensity channel in `[0, 1]` and optional color.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    intensity: Vec<f64>,
    color: Option<Vec<[f64; 3]>>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if height == 0 || width != 2 * height {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

fn luma(c: &[f64; 3]) -> f64 {
    LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
}

impl EquirectImage {
    /// Row-major intensities; values are clamped into `[0, 1]`.
    pub fn from_intensity(width: usize, height: usize, mut intensity: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if intensity.len() != width * height {
            return Err(Error::DimensionsMismatch(width, height, intensity.len(), 1));
        }
        for x in &mut intensity {
            *x = x.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            intensity,
            color: None,
        })
    }

    /// Row-major RGB; intensity is derived with the luma weights.
    pub fn from_color(width: usize, height: usize, mut color: Vec<[f64; 3]>) -> Result<Self> {
        check_dims(width, height)?;
        if color.len() != width * height {
            return Err(Error::DimensionsMismatch(width, height, color.len(), 1));
        }
        for c in &mut color {
            for x in c.iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
        }
        let intensity = color.iter().map(luma).collect();
        Ok(Self {
            width,
            height,
            intensity,
            color: Some(color),
        })
    }

    /// Renders `f` at every pixel center.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(&Direction) -> f64) -> Result<Self> {
        check_dims(width, height)?;
        let mut intensity = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let d = equirect_to_direction_unchecked(u as f64, v as f64, width, height);
                intensity.push(f(&d).clamp(0.0, 1.0));
            }
        }
        Ok(Self {
            width,
            height,
            intensity,
            color: None,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_intensity(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn color(&self) -> Option<&[[f64; 3]]> {
        self.color.as_deref()
    }

    pub fn pixel(&self, u: usize, v: usize) -> f64 {
        self.intensity[v * self.width + u]
    }

    pub fn mean_intensity(&self) -> f64 {
        self.intensity.iter().sum::<f64>() / self.intensity.len() as f64
    }

    pub fn same_dimensions(&self, other: &EquirectImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionsMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Direction of the (fractional) pixel coordinate.
    pub fn direction_at(&self, u: f64, v: f64) -> Direction {
        equirect_to_direction_unchecked(u, v, self.width, self.height)
    }

    /// Pixel coordinate seen along `d`.
    pub fn project(&self, d: &Direction) -> (f64, f64) {
        direction_to_equirect_unchecked(d.as_vector(), self.width, self.height)
    }

    /// Bilinear intensity, wrapping across the longitude seam.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let t = BilinearTap::new(u, v, self.width, self.height);
        t.apply(&self.intensity)
    }

    pub fn sample_direction(&self, d: &Direction) -> f64 {
        let (u, v) = self.project(d);
        self.sample_bilinear(u, v)
    }

    /// Mean absolute intensity difference.
    pub fn mean_abs_diff(&self, other: &EquirectImage) -> Result<f64> {
        self.same_dimensions(other)?;
        Ok(self
            .intensity
            .iter()
            .zip(&other.intensity)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.intensity.len() as f64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        check_dims(w, h)?;
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let color = rgb
                .pixels()
                .map(|p| p.0.map(|c| c as f64 / 255.0))
                .collect();
            Self::from_color(w, h, color)
        } else {
            let gray = img.to_luma8();
            let intensity = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Self::from_intensity(w, h, intensity)
        }
    }

    /// Writes 8-bit RGB when color is present, otherwise 8-bit grayscale.
    /// The format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match &self.color {
            Some(color) => {
                let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                    Rgb(color[(y * w + x) as usize].map(quantize))
                });
                buf.save(path)
            }
            None => {
                let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| {
                    Luma([quantize(self.intensity[(y * w + x) as usize])])
                });
                buf.save(path)
            }
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Four-neighbor bilinear stencil with horizontal wrap and vertical clamp.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    idx: [usize; 4],
    w: [f64; 4],
}

impl BilinearTap {
    #[inline]
    pub(crate) fn new(u: f64, v: f64, width: usize, height: usize) -> Self {
        let wf = width as f64;
        let mut u = u.rem_euclid(wf);
        if u >= wf {
            u = 0.0;
        }
        let v = v.clamp(0.0, (height - 1) as f64);
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let u0 = u0 as usize;
        let v0 = v0 as usize;
        let u1 = if u0 + 1 == width { 0 } else { u0 + 1 };
        let v1 = (v0 + 1).min(height - 1);
        Self {
            idx: [
                v0 * width + u0,
                v0 * width + u1,
                v1 * width + u0,
                v1 * width + u1,
            ],
            w: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }

    /// For `u` in `[0, width)` and `v` in `[0, height - 1)`, as guaranteed
    /// away from the poles.
    #[inline]
    pub(crate) fn new_interior(u: f64, v: f64, width: usize) -> Self {
        let u0 = u as usize;
        let v0 = v as usize;
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let u1 = if u0 + 1 == width { 0 } else { u0 + 1 };
        let row0 = v0 * width;
        let row1 = row0 + width;
        Self {
            idx: [row0 + u0, row0 + u1, row1 + u0, row1 + u1],
            w: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }

    #[inline]
    pub(crate) fn apply_texel(&self, data: &[[f64; 3]]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..4 {
            let t = &data[self.idx[k]];
            out[0] += self.w[k] * t[0];
            out[1] += self.w[k] * t[1];
            out[2] += self.w[k] * t[2];
        }
        out
    }

    #[inline]
    pub(crate) fn apply(&self, data: &[f64]) -> f64 {
        self.w[0] * data[self.idx[0]]
            + self.w[1] * data[self.idx[1]]
            + self.w[2] * data[self.idx[2]]
            + self.w[3] * data[self.idx[3]]
    }

    pub(crate) fn apply_rgb(&self, data: &[[f64; 3]]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..4 {
            let c = &data[self.idx[k]];
            for ch in 0..3 {
                out[ch] += self.w[k] * c[ch];
            }
        }
        out
    }
}

/// Intensity from color with the luma weights `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(img: &EquirectImage) -> Result<EquirectImage> {
    let color = img.color.as_ref().ok_or(Error::MissingColor)?;
    EquirectImage::from_intensity(img.width, img.height, color.iter().map(luma).collect())
}

/// Bilinear sample at a fractional pixel coordinate.
pub fn sample_bilinear(img: &EquirectImage, u: f64, v: f64) -> f64 {
    img.sample_bilinear(u, v)
}

/// Resamples the panorama so that output direction `d` shows the input at
/// `R^T d`. Color channels, when present, are resampled alongside.
pub fn rotate_equirect(img: &EquirectImage, r: &RotationSO3) -> EquirectImage {
    let (w, h) = (img.width, img.height);
    let mut intensity = Vec::with_capacity(w * h);
    let mut color = img.color.as_ref().map(|_| Vec::with_capacity(w * h));
    let m = r.matrix();
    for v in 0..h {
        for u in 0..w {
            let d = equirect_to_direction_unchecked(u as f64, v as f64, w, h);
            let src = m.tr_mul(d.as_vector());
            let (su, sv) = direction_to_equirect_unchecked(&src, w, h);
            let tap = BilinearTap::new(su, sv, w, h);
            intensity.push(tap.apply(&img.intensity));
            if let (Some(out), Some(c)) = (color.as_mut(), img.color.as_ref()) {
                out.push(tap.apply_rgb(c));
            }
        }
    }
    EquirectImage {
        width: w,
        height: h,
        intensity,
        color,
    }
}
