//! Procedural toy faces: an elliptical face, two symmetric eyes, a
//! rectangular mouth and a hair cap, each with its own random color and
//! texture. Region appearances are drawn independently, so style transfer
//! from a particular source is directly measurable.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, SampleEntry, Splits};
use crate::error::{io_err, Result};
use crate::image::RgbImage;
use crate::mask::SemanticMask;
use crate::taxonomy::RegionTaxonomy;

/// Sampling ranges of the toy geometry, in units of the image side.
/// Every range is `(lo, hi)` and sampled uniformly.
#[derive(Clone, Copy, Debug)]
pub struct ToyRanges {
    pub center_x: (f64, f64),
    pub center_y: (f64, f64),
    /// Face ellipse semi-axes.
    pub axis_x: (f64, f64),
    pub axis_y: (f64, f64),
    /// Hair ellipse = face ellipse grown by this margin on both axes.
    pub hair_margin: (f64, f64),
    /// Hair covers `y < cy - hairline * axis_y`.
    pub hairline: (f64, f64),
    /// Eye centers sit at `cy - eye_height * axis_y`, `cx ± eye_spread * axis_x`.
    pub eye_height: (f64, f64),
    pub eye_spread: (f64, f64),
    pub eye_radius: (f64, f64),
    /// Mouth center at `cy + mouth_offset * axis_y`.
    pub mouth_offset: (f64, f64),
    pub mouth_half_w: (f64, f64),
    pub mouth_half_h: (f64, f64),
}

pub const TOY_RANGES: ToyRanges = ToyRanges {
    center_x: (0.44, 0.56),
    center_y: (0.48, 0.58),
    axis_x: (0.22, 0.30),
    axis_y: (0.28, 0.36),
    hair_margin: (0.03, 0.08),
    hairline: (0.35, 0.6),
    eye_height: (0.0, 0.2),
    eye_spread: (0.35, 0.5),
    eye_radius: (0.045, 0.07),
    mouth_offset: (0.4, 0.6),
    mouth_half_w: (0.06, 0.12),
    mouth_half_h: (0.03, 0.05),
};

/// Background color shared by every sample, in `[-1, 1]`.
pub const BACKGROUND_RGB: [f32; 3] = [-0.6, -0.6, -0.5];

const FACE: u8 = 0;
const EYE_L: u8 = 1;
const EYE_R: u8 = 2;
const MOUTH: u8 = 3;
const HAIR: u8 = 4;
const BACKGROUND: u8 = 5;

/// One sampled face layout in unit coordinates.
#[derive(Clone, Debug)]
pub struct ToyGeometry {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub hair_margin: f64,
    pub hairline: f64,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub eye_r: f64,
    pub mouth_y: f64,
    pub mouth_hw: f64,
    pub mouth_hh: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl ToyGeometry {
    pub fn sample<R: Rng + ?Sized>(r: &ToyRanges, rng: &mut R) -> Self {
        let cx = uniform(rng, r.center_x);
        let cy = uniform(rng, r.center_y);
        let ax = uniform(rng, r.axis_x);
        let ay = uniform(rng, r.axis_y);
        let hair_margin = uniform(rng, r.hair_margin);
        let hairline = cy - uniform(rng, r.hairline) * ay;
        let eye_y = cy - uniform(rng, r.eye_height) * ay;
        let eye_dx = uniform(rng, r.eye_spread) * ax;
        let eye_r = uniform(rng, r.eye_radius);
        let mouth_y = cy + uniform(rng, r.mouth_offset) * ay;
        let mouth_hw = uniform(rng, r.mouth_half_w);
        let mouth_hh = uniform(rng, r.mouth_half_h);
        Self {
            cx,
            cy,
            ax,
            ay,
            hair_margin,
            hairline,
            eye_y,
            eye_dx,
            eye_r,
            mouth_y,
            mouth_hw,
            mouth_hh,
        }
    }

    /// Toy label at unit-square point `(x, y)`; later shapes paint over
    /// earlier ones (face, hair, eyes, mouth).
    pub fn label_at(&self, x: f64, y: f64) -> u8 {
        let in_ellipse = |ax: f64, ay: f64| {
            let (dx, dy) = ((x - self.cx) / ax, (y - self.cy) / ay);
            dx * dx + dy * dy <= 1.0
        };
        let mut l = BACKGROUND;
        if in_ellipse(self.ax, self.ay) {
            l = FACE;
        }
        if y < self.hairline && in_ellipse(self.ax + self.hair_margin, self.ay + self.hair_margin) {
            l = HAIR;
        }
        let r2 = self.eye_r * self.eye_r;
        let dy = y - self.eye_y;
        // the subject's left eye appears on the image right
        if (x - (self.cx + self.eye_dx)).powi(2) + dy * dy <= r2 {
            l = EYE_L;
        }
        if (x - (self.cx - self.eye_dx)).powi(2) + dy * dy <= r2 {
            l = EYE_R;
        }
        if (x - self.cx).abs() <= self.mouth_hw && (y - self.mouth_y).abs() <= self.mouth_hh {
            l = MOUTH;
        }
        l
    }

    /// Rasterizes at pixel centers.
    pub fn rasterize(&self, resolution: usize) -> Vec<u8> {
        let s = resolution as f64;
        let mut labels = Vec::with_capacity(resolution * resolution);
        for y in 0..resolution {
            for x in 0..resolution {
                labels.push(self.label_at((x as f64 + 0.5) / s, (y as f64 + 0.5) / s));
            }
        }
        labels
    }
}

/// Per-region appearance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    Flat,
    Stripes { period: usize, horizontal: bool },
    Checker { period: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct Appearance {
    pub base: [f32; 3],
    pub accent: [f32; 3],
    pub texture: Texture,
}

impl Appearance {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let base: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-0.9f32..0.9));
        let shift: f32 = if rng.gen_bool(0.5) { 0.2 } else { -0.2 };
        let accent = base.map(|c| (c + shift).clamp(-1.0, 1.0));
        let texture = match rng.gen_range(0..3) {
            0 => Texture::Flat,
            1 => Texture::Stripes {
                period: rng.gen_range(3..=6),
                horizontal: rng.gen_bool(0.5),
            },
            _ => Texture::Checker {
                period: rng.gen_range(3..=6),
            },
        };
        Self { base, accent, texture }
    }

    pub fn color_at(&self, x: usize, y: usize) -> [f32; 3] {
        let accent = match self.texture {
            Texture::Flat => false,
            Texture::Stripes { period, horizontal } => (if horizontal { y } else { x } / period) % 2 == 1,
            Texture::Checker { period } => (x / period + y / period) % 2 == 1,
        };
        if accent {
            self.accent
        } else {
            self.base
        }
    }
}

/// One generated sample.
#[derive(Clone, Debug)]
pub struct ToySample {
    pub image: RgbImage,
    pub mask: SemanticMask,
    pub geometry: ToyGeometry,
    /// Indexed by region; both eyes share one appearance.
    pub appearance: [Appearance; 5],
}

/// Generates sample `index` of the stream seeded by `seed`. Every sample is a
/// pure function of `(seed, index)`.
pub fn toy_sample(resolution: usize, seed: u64, index: u64) -> Result<ToySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let geometry = ToyGeometry::sample(&TOY_RANGES, &mut rng);
    let face = Appearance::sample(&mut rng);
    let eyes = Appearance::sample(&mut rng);
    let mouth = Appearance::sample(&mut rng);
    let hair = Appearance::sample(&mut rng);
    let appearance = [face, eyes, eyes, mouth, hair];
    let labels = geometry.rasterize(resolution);
    let hw = resolution * resolution;
    let mut data = vec![0.0f32; 3 * hw];
    for y in 0..resolution {
        for x in 0..resolution {
            let p = y * resolution + x;
            let rgb = match labels[p] {
                BACKGROUND => BACKGROUND_RGB,
                l => appearance[l as usize].color_at(x, y),
            };
            for c in 0..3 {
                data[c * hw + p] = rgb[c];
            }
        }
    }
    let id = toy_id(index);
    Ok(ToySample {
        image: RgbImage::new(resolution, resolution, data)?,
        mask: SemanticMask::new(resolution, resolution, labels, id)?,
        geometry,
        appearance,
    })
}

pub fn toy_id(index: u64) -> String {
    format!("toy{index:05}")
}

/// Writes `n` toy samples under `root` (`images/`, `masks/`, `manifest.json`).
/// The last `n_test` ids form the test split, the rest the training split.
pub fn generate_toy_dataset(root: &Path, n: usize, resolution: usize, seed: u64, n_test: usize) -> Result<DatasetManifest> {
    let taxonomy = RegionTaxonomy::toy();
    for dir in ["images", "masks"] {
        std::fs::create_dir_all(root.join(dir)).map_err(io_err(root.join(dir)))?;
    }
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let s = toy_sample(resolution, seed, k as u64)?;
        let id = toy_id(k as u64);
        let image = format!("images/{id}.png");
        let mask = format!("masks/{id}.png");
        s.image.save_png(&root.join(&image))?;
        s.mask.save_png(&root.join(&mask))?;
        samples.push(SampleEntry { id, image, mask });
    }
    let n_test = n_test.min(n);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        taxonomy,
        resolution,
        samples,
        splits: Splits {
            train: ids[..n - n_test].to_vec(),
            val: Vec::new(),
            test: ids[n - n_test..].to_vec(),
        },
    };
    manifest.save()?;
    Ok(manifest)
}
