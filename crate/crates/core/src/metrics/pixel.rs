//! Full-reference pixel metrics on planar (CHW) data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// A metric value, or a flag where a number would mislead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Score {
    Value(f64),
    Flag(Flag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Flag {
    /// PSNR of identical inputs.
    INF,
    /// Region missing from the reference.
    ABSENT,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Flag(_) => None,
        }
    }

    pub fn is_inf(self) -> bool {
        self == Score::Flag(Flag::INF)
    }

    pub fn is_absent(self) -> bool {
        self == Score::Flag(Flag::ABSENT)
    }
}

/// Shape of planar data: `channels × height × width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Planes {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_pair<T>(a: &[T], b: &[T], shape: Planes) -> Result<()> {
    if a.len() != shape.len() || b.len() != shape.len() {
        return Err(Error::Shape(format!(
            "metric inputs have {} and {} values for {}x{}x{}",
            a.len(),
            b.len(),
            shape.channels,
            shape.height,
            shape.width
        )));
    }
    if shape.is_empty() {
        return Err(Error::Shape("metric inputs are empty".into()));
    }
    Ok(())
}

/// Normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Window side used for an `h × w` plane: 11, shrunk to the largest odd
/// size that fits smaller inputs.
pub fn ssim_window_size(height: usize, width: usize) -> usize {
    let m = SSIM_WINDOW.min(height).min(width);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Valid-mode separable filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|j| k[j] * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5) and channels,
/// with stabilizers `(0.01 L)²`, `(0.03 L)²` for data range `L`.
pub fn ssim<T: Copy + Into<f64>>(a: &[T], b: &[T], shape: Planes, data_range: f64) -> Result<f64> {
    check_pair(a, b, shape)?;
    let (h, w) = (shape.height, shape.width);
    let k = gaussian_window(ssim_window_size(h, w), SSIM_SIGMA);
    let (c1, c2) = ((K1 * data_range).powi(2), (K2 * data_range).powi(2));
    let hw = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..shape.channels {
        let pa: Vec<f64> = a[c * hw..(c + 1) * hw].iter().map(|&v| v.into()).collect();
        let pb: Vec<f64> = b[c * hw..(c + 1) * hw].iter().map(|&v| v.into()).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mu_a = filter(&pa, h, w, &k);
        let mu_b = filter(&pb, h, w, &k);
        let aa = filter(&prod(&pa, &pa), h, w, &k);
        let bb = filter(&prod(&pb, &pb), h, w, &k);
        let ab = filter(&prod(&pa, &pb), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn mse<T: Copy + Into<f64>>(a: &[T], b: &[T], shape: Planes) -> Result<f64> {
    check_pair(a, b, shape)?;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p.into() - q.into();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

pub fn rmse<T: Copy + Into<f64>>(a: &[T], b: &[T], shape: Planes) -> Result<f64> {
    Ok(mse(a, b, shape)?.sqrt())
}

/// `20 log10(peak) − 10 log10(MSE)`, flagged `INF` when the inputs are identical.
pub fn psnr<T: Copy + Into<f64>>(a: &[T], b: &[T], shape: Planes, peak: f64) -> Result<Score> {
    let m = mse(a, b, shape)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Score {
    if mse == 0.0 {
        Score::Flag(Flag::INF)
    } else {
        Score::Value(20.0 * peak.log10() - 10.0 * mse.log10())
    }
}
