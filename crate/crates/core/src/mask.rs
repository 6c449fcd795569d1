//! Hard semantic masks and binary region slices.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::image::decode_image;
use crate::taxonomy::RegionTaxonomy;

/// Identifier of the sample a mask or image came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub String);

impl SourceId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for SourceId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<&str> for SourceId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Per-pixel region labels of one source; label `N` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    source_id: SourceId,
}

/// Binary indicator of one region's pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSlice {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RegionSlice {
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Intersection over union; two empty slices count as a perfect match.
    pub fn iou(&self, other: &RegionSlice) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl SemanticMask {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        source_id: impl Into<SourceId>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask has {} labels for {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            source_id: source_id.into(),
        })
    }

    /// All-background mask.
    pub fn background(height: usize, width: usize, taxonomy: &RegionTaxonomy, source_id: impl Into<SourceId>) -> Self {
        Self {
            height,
            width,
            labels: vec![taxonomy.background_index() as u8; height * width],
            source_id: source_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn source_id(&self) -> &SourceId {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<SourceId>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Every label must lie in `0..=N`.
    pub fn validate(&self, taxonomy: &RegionTaxonomy) -> Result<()> {
        let bg = taxonomy.background_index();
        match self.labels.iter().find(|&&l| l as usize > bg) {
            Some(l) => Err(Error::Taxonomy(format!(
                "mask `{}` has label {l} outside 0..={bg}",
                self.source_id
            ))),
            None => Ok(()),
        }
    }

    pub fn extract_region(&self, taxonomy: &RegionTaxonomy, i: usize) -> Result<RegionSlice> {
        taxonomy.check_index(i)?;
        Ok(self.region_slice(i))
    }

    pub(crate) fn region_slice(&self, i: usize) -> RegionSlice {
        RegionSlice {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| (l as usize == i) as u8).collect(),
        }
    }

    pub fn contains_region(&self, i: usize) -> bool {
        self.labels.iter().any(|&l| l as usize == i)
    }

    /// Sorted region indices that occur in the mask.
    pub fn present_regions(&self, taxonomy: &RegionTaxonomy) -> Vec<usize> {
        let mut seen = vec![false; taxonomy.len()];
        for &l in &self.labels {
            if let Some(s) = seen.get_mut(l as usize) {
                *s = true;
            }
        }
        (0..taxonomy.len()).filter(|&i| seen[i]).collect()
    }

    /// `[channels, H, W]` one-hot expansion.
    pub fn one_hot(&self, channels: usize) -> Vec<f32> {
        let hw = self.labels.len();
        let mut out = vec![0.0; channels * hw];
        for (p, &l) in self.labels.iter().enumerate() {
            let l = l as usize;
            assert!(l < channels, "label {l} outside {channels} channels");
            out[l * hw + p] = 1.0;
        }
        out
    }

    /// Mirror left-right, swapping paired left/right region labels.
    pub fn flip_horizontal(&self, taxonomy: &RegionTaxonomy) -> Self {
        let map: Vec<u8> = (0..=taxonomy.len())
            .map(|i| {
                if i < taxonomy.len() {
                    taxonomy.mirror_of(i) as u8
                } else {
                    i as u8
                }
            })
            .collect();
        let mut labels = vec![0; self.labels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.labels[y * self.width + x];
                labels[y * self.width + (self.width - 1 - x)] =
                    *map.get(l as usize).unwrap_or(&l);
            }
        }
        Self {
            labels,
            ..self.clone()
        }
    }

    /// Reads an 8-bit single-channel indexed image.
    pub fn load_png(path: &Path, source_id: impl Into<SourceId>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::decode_png(&bytes, path, source_id)
    }

    /// Decodes an in-memory label image; `origin` names it in errors.
    pub fn decode_png(bytes: &[u8], origin: &Path, source_id: impl Into<SourceId>) -> Result<Self> {
        let gray = decode_image(bytes, origin)?.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(h as usize, w as usize, gray.into_raw(), source_id)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
