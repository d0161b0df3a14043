//! Dual-fisheye captures and their conversion to equirectangular.
//!
//! Both lenses follow the equidistant model `r = f * theta`, with
//! `f = radius / (fov / 2)`. The front lens looks along +x with image right
//! = -y and image down = -z; the rear lens looks along -x with image right
//! = +y. Where both lenses see a direction the colors are blended linearly
//! by the angular margin to each lens edge.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use nalgebra::Vector3;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::panorama::{quantize, EquirectImage};
use crate::sphere::{equirect_to_direction_unchecked, Direction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lens {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LensSide {
    Front,
    Rear,
}

impl LensSide {
    fn frame(self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let down = Vector3::new(0.0, 0.0, -1.0);
        match self {
            LensSide::Front => (Vector3::x(), -Vector3::y(), down),
            LensSide::Rear => (-Vector3::x(), Vector3::y(), down),
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            LensSide::Front => "front",
            LensSide::Rear => "rear",
        }
    }
}

impl Lens {
    fn half_fov(&self) -> f64 {
        self.fov_deg.to_radians() / 2.0
    }

    fn validate(&self, side: LensSide) -> Result<()> {
        let name = side.prefix();
        if !(180.0..=220.0).contains(&self.fov_deg) {
            return Err(Error::InvalidLens(format!(
                "{name}.fov {} outside [180, 220]",
                self.fov_deg
            )));
        }
        if !(self.radius > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidLens(format!("{name} center/radius invalid")));
        }
        Ok(())
    }

    /// Pixel where `d` lands, or `None` outside the lens field of view.
    pub fn project(&self, side: LensSide, d: &Direction) -> Option<(f64, f64)> {
        let (axis, right, down) = side.frame();
        let v = d.as_vector();
        let theta = v.cross(&axis).norm().atan2(v.dot(&axis));
        if theta > self.half_fov() + 1e-12 {
            return None;
        }
        let r = self.radius * theta / self.half_fov();
        let (a, b) = (v.dot(&right), v.dot(&down));
        let rho = a.hypot(b);
        if rho < 1e-15 {
            return Some((self.cx, self.cy));
        }
        Some((self.cx + r * a / rho, self.cy + r * b / rho))
    }

    /// Viewing direction of pixel `(px, py)`, or `None` outside the image circle.
    pub fn unproject(&self, side: LensSide, px: f64, py: f64) -> Option<Direction> {
        let (axis, right, down) = side.frame();
        let (dx, dy) = (px - self.cx, py - self.cy);
        let r = dx.hypot(dy);
        if r > self.radius {
            return None;
        }
        let theta = r / self.radius * self.half_fov();
        if r < 1e-15 {
            return Some(Direction::new_unchecked(axis));
        }
        let tangent = (right * dx + down * dy) / r;
        Direction::new(axis * theta.cos() + tangent * theta.sin())
    }
}

/// Front and rear lens parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensPair {
    pub front: Lens,
    pub rear: Lens,
}

impl LensPair {
    pub fn new(front: Lens, rear: Lens) -> Result<Self> {
        front.validate(LensSide::Front)?;
        rear.validate(LensSide::Rear)?;
        let gap = (front.cx - rear.cx).hypot(front.cy - rear.cy);
        if gap < front.radius + rear.radius - 1e-9 {
            return Err(Error::InvalidLens("lens circles overlap".into()));
        }
        Ok(Self { front, rear })
    }

    /// Reads `front.cx`, `front.cy`, `front.radius`, `front.fov` and the
    /// matching `rear.*` keys.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let lens = |side: LensSide| -> Result<Lens> {
            let p = side.prefix();
            Ok(Lens {
                cx: s.require(&format!("{p}.cx"))?,
                cy: s.require(&format!("{p}.cy"))?,
                radius: s.require(&format!("{p}.radius"))?,
                fov_deg: s.require(&format!("{p}.fov"))?,
            })
        };
        Self::new(lens(LensSide::Front)?, lens(LensSide::Rear)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_settings(&Settings::load(path)?)
    }

    /// Side-by-side layout filling a `2h x h` frame, both lenses of the
    /// given field of view.
    pub fn side_by_side(height: usize, fov_deg: f64) -> Result<Self> {
        let r = height as f64 / 2.0;
        let lens = |cx| Lens {
            cx,
            cy: r - 0.5,
            radius: r,
            fov_deg,
        };
        Self::new(lens(r - 0.5), lens(3.0 * r - 0.5))
    }

    fn lens(&self, side: LensSide) -> &Lens {
        match side {
            LensSide::Front => &self.front,
            LensSide::Rear => &self.rear,
        }
    }

    /// Blend weights `(front, rear)` for a direction; they sum to one.
    pub fn blend_weights(&self, d: &Direction) -> Result<(f64, f64)> {
        let theta_front = d.angle_to(&Direction::FORWARD);
        let margin_front = self.front.half_fov() - theta_front;
        let margin_rear = self.rear.half_fov() - (std::f64::consts::PI - theta_front);
        match (margin_front >= 0.0, margin_rear >= 0.0) {
            (true, true) if margin_front + margin_rear > 0.0 => {
                let wf = margin_front / (margin_front + margin_rear);
                Ok((wf, 1.0 - wf))
            }
            (true, _) => Ok((1.0, 0.0)),
            (false, true) => Ok((0.0, 1.0)),
            (false, false) => Err(Error::DirectionUncovered),
        }
    }
}

/// Raw dual-fisheye capture with its lens calibration.
#[derive(Debug, Clone)]
pub struct DualFisheyeImage {
    width: usize,
    height: usize,
    color: Vec<[f64; 3]>,
    lenses: LensPair,
}

impl DualFisheyeImage {
    pub fn new(width: usize, height: usize, color: Vec<[f64; 3]>, lenses: LensPair) -> Result<Self> {
        if color.len() != width * height || width == 0 || height == 0 {
            return Err(Error::DimensionsMismatch(width, height, color.len(), 1));
        }
        Ok(Self {
            width,
            height,
            color,
            lenses,
        })
    }

    pub fn load(path: impl AsRef<Path>, lenses: LensPair) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let color = img
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect();
        Self::new(img.width() as usize, img.height() as usize, color, lenses)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let w = self.width as u32;
        let buf: RgbImage = ImageBuffer::from_fn(w, self.height as u32, |x, y| {
            Rgb(self.color[(y * w + x) as usize].map(quantize))
        });
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Renders a capture of `pano` through the given lenses; pixels outside
    /// both image circles are black.
    pub fn render_from(pano: &EquirectImage, width: usize, height: usize, lenses: LensPair) -> Self {
        let mut color = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64, y as f64);
                let dir = lenses
                    .front
                    .unproject(LensSide::Front, px, py)
                    .filter(|_| in_circle(&lenses.front, px, py))
                    .or_else(|| lenses.rear.unproject(LensSide::Rear, px, py));
                let c = match dir {
                    Some(d) => sample_pano_rgb(pano, &d),
                    None => [0.0; 3],
                };
                color.push(c);
            }
        }
        Self {
            width,
            height,
            color,
            lenses,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn lenses(&self) -> &LensPair {
        &self.lenses
    }

    /// Bilinear color with edge clamping.
    fn sample(&self, px: f64, py: f64) -> [f64; 3] {
        let px = px.clamp(0.0, (self.width - 1) as f64);
        let py = py.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (px.floor() as usize, py.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let at = |x: usize, y: usize| self.color[y * self.width + x];
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (1.0 - fx) * (1.0 - fy) * at(x0, y0)[ch]
                + fx * (1.0 - fy) * at(x1, y0)[ch]
                + (1.0 - fx) * fy * at(x0, y1)[ch]
                + fx * fy * at(x1, y1)[ch];
        }
        out
    }

    fn sample_lens(&self, side: LensSide, d: &Direction) -> [f64; 3] {
        match self.lenses.lens(side).project(side, d) {
            Some((px, py)) => self.sample(px, py),
            None => [0.0; 3],
        }
    }
}

fn in_circle(lens: &Lens, px: f64, py: f64) -> bool {
    (px - lens.cx).hypot(py - lens.cy) <= lens.radius
}

fn sample_pano_rgb(pano: &EquirectImage, d: &Direction) -> [f64; 3] {
    match pano.color() {
        Some(_) => {
            let (u, v) = pano.project(d);
            sample_color(pano, u, v)
        }
        None => [pano.sample_direction(d); 3],
    }
}

fn sample_color(pano: &EquirectImage, u: f64, v: f64) -> [f64; 3] {
    let color = pano.color().expect("checked by caller");
    crate::panorama::BilinearTap::new(u, v, pano.width(), pano.height()).apply_rgb(color)
}

/// Converts a dual-fisheye capture to a color equirectangular panorama of
/// width `out_width` (must be even).
pub fn dualfisheye_to_equirect(df: &DualFisheyeImage, out_width: usize) -> Result<EquirectImage> {
    if out_width == 0 || !out_width.is_multiple_of(2) {
        return Err(Error::InvalidDimensions {
            width: out_width,
            height: out_width / 2,
        });
    }
    let out_height = out_width / 2;
    let mut color = Vec::with_capacity(out_width * out_height);
    for v in 0..out_height {
        for u in 0..out_width {
            let d = equirect_to_direction_unchecked(u as f64, v as f64, out_width, out_height);
            let (wf, wr) = df.lenses.blend_weights(&d)?;
            let mut c = [0.0; 3];
            if wf > 0.0 {
                let f = df.sample_lens(LensSide::Front, &d);
                for ch in 0..3 {
                    c[ch] += wf * f[ch];
                }
            }
            if wr > 0.0 {
                let r = df.sample_lens(LensSide::Rear, &d);
                for ch in 0..3 {
                    c[ch] += wr * r[ch];
                }
            }
            color.push(c);
        }
    }
    EquirectImage::from_color(out_width, out_height, color)
}
