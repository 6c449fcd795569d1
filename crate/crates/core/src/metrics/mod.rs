//! Reconstruction metrics: SSIM, RMSE, PSNR, Fréchet distance over a
//! pluggable feature extractor, and region-restricted variants.
//!
//! Image-level helpers take `[-1, 1]` images and score them on the `[0, 1]`
//! scale; the planar functions take any declared data range.

mod features;
mod frechet;
mod pixel;
mod region;
mod report;

pub use features::{FeatureExtractor, RandomProjectionCnn};
pub use frechet::{frechet_distance, Frechet};
pub use pixel::{
    gaussian_window, mse, psnr, psnr_from_mse, rmse, ssim, ssim_window_size, Flag, Planes, Score, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use region::{bounding_box, image_scores, per_region_metric, restrict, unit_range, ImageScores, Metric, NEUTRAL};
pub use report::{evaluate, EvalPair, EvalReport, MetricReport, SampleRow};
