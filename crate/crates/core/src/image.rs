use std::io::Cursor;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::mask::RegionSlice;

/// Largest accepted side of a decoded image.
pub const MAX_DECODE_SIDE: u32 = 8192;

/// Decodes PNG (or JPEG) bytes with bounded dimensions and allocation.
pub(crate) fn decode_image(bytes: &[u8], origin: &Path) -> Result<image::DynamicImage> {
    let wrap = |source| Error::Image {
        path: origin.to_path_buf(),
        source,
    };
    let mut reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| wrap(image::ImageError::IoError(e)))?;
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(MAX_DECODE_SIDE);
    limits.max_image_height = Some(MAX_DECODE_SIDE);
    limits.max_alloc = Some(1 << 30);
    reader.limits(limits);
    reader.decode().map_err(wrap)
}

/// Three-channel image, CHW layout, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "image has {} values for 3x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for c in 0..3 {
            data[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = rgb[c]);
        }
        Self { height, width, data }
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let hw = h * w;
        let mut data = vec![0.0; 3 * hw];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * hw + y as usize * w + x as usize] = p[c] as f32 / 127.5 - 1.0;
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let hw = self.height * self.width;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = y as usize * self.width + x as usize;
            let q = |c: usize| ((self.data[c * hw + p].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            image::Rgb([q(0), q(1), q(2)])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Ok(Self::from_rgb8(&decode_image(&bytes, path)?.to_rgb8()))
    }

    /// Decodes an encoded image held in memory; `origin` names it in errors.
    pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<Self> {
        Ok(Self::from_rgb8(&decode_image(bytes, origin)?.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Mean RGB over the pixels of `slice`; `None` for an empty slice.
    pub fn mean_color(&self, slice: &RegionSlice) -> Option<[f64; 3]> {
        let hw = self.height * self.width;
        let n = slice.area();
        if n == 0 {
            return None;
        }
        let mut acc = [0.0f64; 3];
        for (p, &s) in slice.data.iter().enumerate() {
            if s != 0 {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += self.data[c * hw + p] as f64;
                }
            }
        }
        Some(acc.map(|a| a / n as f64))
    }

    /// Zeroes pixels outside `slice`.
    pub fn masked(&self, slice: &RegionSlice) -> Self {
        let hw = self.height * self.width;
        let mut data = self.data.clone();
        for c in 0..3 {
            for (p, &s) in slice.data.iter().enumerate() {
                if s == 0 {
                    data[c * hw + p] = 0.0;
                }
            }
        }
        Self { data, ..*self }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    data[(c * self.height + y) * self.width + (self.width - 1 - x)] = self.pixel(c, y, x);
                }
            }
        }
        Self { data, ..*self }
    }
}
