//! Procedural smooth panoramas for tests, demos and the `synth` command.
//!
//! A scene is an outdoor-like sky/ground gradient plus a few random lobes
//! `a * exp(kappa * (d.c - 1))`, squashed into `[0, 1]` with `tanh`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::panorama::EquirectImage;
use crate::sphere::Direction;

#[derive(Debug, Clone)]
struct Lobe {
    center: Vector3<f64>,
    kappa: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothScene {
    horizon_contrast: f64,
    lobes: Vec<Lobe>,
}

fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl SmoothScene {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lobes = (0..12)
            .map(|_| Lobe {
                center: random_direction(&mut rng),
                kappa: rng.random_range(4.0..16.0),
                amplitude: rng.random_range(0.6..1.4) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            })
            .collect();
        Self {
            horizon_contrast: rng.random_range(0.6..1.2),
            lobes,
        }
    }

    pub fn brightness(&self, d: &Direction) -> f64 {
        let v = d.as_vector();
        let mut s = self.horizon_contrast * (2.0 * v.z).tanh();
        for l in &self.lobes {
            s += l.amplitude * (l.kappa * (v.dot(&l.center) - 1.0)).exp();
        }
        0.5 + 0.4 * (0.8 * s).tanh()
    }

    pub fn render(&self, width: usize) -> EquirectImage {
        EquirectImage::from_fn(width, width / 2, |d| self.brightness(d))
            .expect("even width gives a 2:1 panorama")
    }
}

/// Color panorama from three independent scenes.
pub fn color_panorama(seed: u64, width: usize) -> EquirectImage {
    let scenes = [0, 1, 2].map(|k| SmoothScene::random(seed.wrapping_mul(31).wrapping_add(k)));
    let probe = scenes[0].render(width);
    let mut color = Vec::with_capacity(width * width / 2);
    for v in 0..probe.height() {
        for u in 0..width {
            let d = probe.direction_at(u as f64, v as f64);
            color.push(std::array::from_fn(|k| scenes[k].brightness(&d)));
        }
    }
    EquirectImage::from_color(width, width / 2, color).expect("valid dimensions")
}
