//! Image-level and region-restricted reconstruction scores.

use serde::{Deserialize, Serialize};

use super::pixel::{psnr, rmse, ssim, Flag, Planes, Score};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mask::RegionSlice;

/// Value written to non-region pixels of a region's bounding box (mid-gray
/// on the `[0, 1]` scale), identically in both images.
pub const NEUTRAL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssim,
    /// RMSE on the `[0, 1]` scale.
    Rmse,
    /// PSNR with peak 1 on the `[0, 1]` scale.
    Psnr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ssim, Metric::Rmse, Metric::Psnr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Rmse => "rmse",
            Metric::Psnr => "psnr",
        }
    }

    /// Evaluates on `[0, 1]` planar data.
    pub fn eval(self, a: &[f64], b: &[f64], shape: Planes) -> Result<Score> {
        Ok(match self {
            Metric::Ssim => Score::Value(ssim(a, b, shape, 1.0)?),
            Metric::Rmse => Score::Value(rmse(a, b, shape)?),
            Metric::Psnr => psnr(a, b, shape, 1.0)?,
        })
    }
}

/// Maps `[-1, 1]` image values to `[0, 1]`.
pub fn unit_range(image: &RgbImage) -> Vec<f64> {
    image.data.iter().map(|&v| (v as f64 + 1.0) / 2.0).collect()
}

fn planes(image: &RgbImage) -> Planes {
    Planes {
        channels: 3,
        height: image.height,
        width: image.width,
    }
}

fn check_images(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(format!(
            "compared images are {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Scores of one predicted/reference pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub ssim: f64,
    /// RMSE on the `[0, 1]` scale.
    pub rmse: f64,
    /// RMSE on the `[0, 255]` scale divided by 100.
    pub rmse_255_div_100: f64,
    pub psnr: Score,
}

pub fn image_scores(pred: &RgbImage, target: &RgbImage) -> Result<ImageScores> {
    check_images(pred, target)?;
    let (a, b, shape) = (unit_range(pred), unit_range(target), planes(pred));
    let r = rmse(&a, &b, shape)?;
    Ok(ImageScores {
        ssim: ssim(&a, &b, shape, 1.0)?,
        rmse: r,
        rmse_255_div_100: r * 2.55,
        psnr: psnr(&a, &b, shape, 1.0)?,
    })
}

/// Bounding box `(y0, x0, y1, x1)` (exclusive ends) of a non-empty slice.
pub fn bounding_box(slice: &RegionSlice) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..slice.height {
        for x in 0..slice.width {
            if slice.data[y * slice.width + x] != 0 {
                bb = Some(match bb {
                    None => (y, x, y + 1, x + 1),
                    Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y + 1), x1.max(x + 1)),
                });
            }
        }
    }
    bb
}

/// Crops both images to the slice's bounding box and neutralizes pixels
/// outside the region; `None` for an empty slice.
pub fn restrict(a: &RgbImage, b: &RgbImage, slice: &RegionSlice) -> Result<Option<(Vec<f64>, Vec<f64>, Planes)>> {
    check_images(a, b)?;
    if (slice.height, slice.width) != (a.height, a.width) {
        return Err(Error::Shape(format!(
            "region slice is {}x{}, images are {}x{}",
            slice.height, slice.width, a.height, a.width
        )));
    }
    let Some((y0, x0, y1, x1)) = bounding_box(slice) else {
        return Ok(None);
    };
    let (ua, ub) = (unit_range(a), unit_range(b));
    let (h, w) = (y1 - y0, x1 - x0);
    let hw = a.height * a.width;
    let mut ca = Vec::with_capacity(3 * h * w);
    let mut cb = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * a.width + x;
                if slice.data[p] != 0 {
                    ca.push(ua[c * hw + p]);
                    cb.push(ub[c * hw + p]);
                } else {
                    ca.push(NEUTRAL);
                    cb.push(NEUTRAL);
                }
            }
        }
    }
    Ok(Some((
        ca,
        cb,
        Planes {
            channels: 3,
            height: h,
            width: w,
        },
    )))
}

/// `metric` restricted to one region; `ABSENT` when the slice is empty.
pub fn per_region_metric(metric: Metric, a: &RgbImage, b: &RgbImage, slice: &RegionSlice) -> Result<Score> {
    match restrict(a, b, slice)? {
        None => Ok(Score::Flag(Flag::ABSENT)),
        Some((ca, cb, shape)) => metric.eval(&ca, &cb, shape),
    }
}
