//! RGB images in `[0, 1]`, contrast enhancement, HSV conversion and a
//! procedural fundus-like image generator for desk-scale corpora.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::signs::{Sign, SignVector};

/// Interleaved RGB, row-major, channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Shape {
                op: "image",
                lhs: vec![height, width, 3],
                rhs: vec![data.len()],
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn map_pixels(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
        let data = self
            .data
            .chunks_exact(3)
            .flat_map(|p| f([p[0], p[1], p[2]]))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Rec.601 luma.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Interpolates every channel away from (factor > 1) or towards (factor < 1)
/// the image's mean luminance. `1.0` returns the input unchanged and `0.0`
/// a flat gray image.
pub fn enhance_contrast(image: &Image, factor: f64) -> Result<Image> {
    if !(factor >= 0.0) {
        return Err(Error::Contract("enhance_contrast: factor must be non-negative".into()));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let pixels = (image.width * image.height) as f64;
    let gray = image.data.chunks_exact(3).map(|p| luminance([p[0], p[1], p[2]])).sum::<f64>() / pixels;
    Ok(image.map_pixels(|p| p.map(|c| (gray + factor * (c - gray)).clamp(0.0, 1.0))))
}

/// Hexcone RGB → HSV with hue as a fraction of a full turn in `[0, 1)`.
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        let h = (g - b) / delta / 6.0;
        if h < 0.0 {
            h + 1.0
        } else {
            h
        }
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, v]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f64; 3]) -> [f64; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let h6 = (h - libm::floor(h)) * 6.0;
    let sector = libm::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn rgb_to_hsv(image: &Image) -> Image {
    image.map_pixels(rgb_to_hsv_pixel)
}

pub fn hsv_to_rgb(image: &Image) -> Image {
    image.map_pixels(hsv_to_rgb_pixel)
}

/// Deterministic fundus-like picture whose lesions reflect `signs`.
///
/// The eye disc, optic disc and vessel arcs are shared by every image; each
/// active sign adds its own visual cue, and `seed` jitters positions and
/// noise so images of records with identical signs still differ.
pub fn synthetic_fundus(size: usize, signs: &SignVector, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(size, size, [0.0; 3]);
    let s = size as f64;
    let (cx, cy, radius) = (s / 2.0, s / 2.0, 0.47 * s);
    let disc = (
        s * (0.68 + rng.gen_range(-0.04..0.04)),
        s * (0.5 + rng.gen_range(-0.05..0.05)),
    );
    let cup_ratio = if signs.has(Sign::Ocd) { 0.8 } else { 0.4 };
    let disc_r = 0.09 * s;
    let macula = (s * 0.4, s * 0.5);
    let lesions: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s))
        .collect();
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dc = libm::hypot(px - cx, py - cy);
            if dc > radius {
                continue;
            }
            let shade = 1.0 - 0.35 * (dc / radius) * (dc / radius);
            let mut rgb = [0.78 * shade, 0.33 * shade, 0.12 * shade];
            if signs.has(Sign::Fbc) && ((x / 2 + y / 3) % 3 == 0) {
                rgb = [0.62 * shade, 0.22 * shade, 0.1 * shade];
            }
            let dm = libm::hypot(px - macula.0, py - macula.1);
            if dm < 0.1 * s {
                rgb = rgb.map(|c| c * 0.75);
                if signs.has(Sign::Macular) && dm < 0.06 * s {
                    rgb = [0.95, 0.85, 0.35];
                }
            }
            // Vessel arcs leaving the optic disc.
            let dy = py - disc.1;
            let arc = |k: f64| (dy - k * (px - disc.0) * (px - disc.0) / s).abs();
            let width = if signs.has(Sign::Vascular) { 1.4 } else { 0.7 };
            if arc(0.9) < width || arc(-0.9) < width {
                rgb = [0.45, 0.05, 0.05];
            }
            let dd = libm::hypot(px - disc.0, py - disc.1);
            if dd < disc_r {
                rgb = if dd < disc_r * cup_ratio {
                    [1.0, 0.97, 0.85]
                } else {
                    [0.98, 0.8, 0.45]
                };
            }
            if signs.has(Sign::Fhe) {
                for (i, &(lx, ly)) in lesions.iter().enumerate() {
                    let d = libm::hypot(px - lx, py - ly);
                    if d < 0.05 * s {
                        rgb = if i % 2 == 0 { [0.4, 0.0, 0.0] } else { [0.95, 0.9, 0.5] };
                    }
                }
            }
            if signs.has(Sign::Other) && !signs.has(Sign::Fhe) && dc > 0.8 * radius {
                rgb = rgb.map(|c| 0.5 * c + 0.2);
            }
            let noise = rng.gen_range(-0.03..0.03);
            img.set_pixel(x, y, rgb.map(|c| (c + noise).clamp(0.0, 1.0)));
        }
    }
    img
}
