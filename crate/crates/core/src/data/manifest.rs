//! Dataset manifests and ingestion of raw label layouts.
//!
//! A raw dataset root holds `images/<id>.{png,jpg,jpeg}` plus either one
//! indexed label file `masks/<id>.png` or per-region binary files
//! `masks/<id>_<label>.png`. Ingest remaps base labels to taxonomy regions,
//! writes `meta_masks/<id>.png` and persists `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::image::RgbImage;
use crate::mask::{SemanticMask, SourceId};
use crate::taxonomy::RegionTaxonomy;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// Image and mask paths of one sample, relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub taxonomy: RegionTaxonomy,
    pub resolution: usize,
    pub samples: Vec<SampleEntry>,
    pub splits: Splits,
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn save(&self) -> Result<()> {
        self.validate()?;
        let path = self.path();
        let text = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Reads a manifest from a file or from `<dir>/manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Unique ids, relative paths inside the root, and disjoint splits over
    /// known ids.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::Config(format!("manifest: {detail}"));
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(bad(format!("duplicate sample id `{}`", s.id)));
            }
            for p in [&s.image, &s.mask] {
                let rel = Path::new(p);
                if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(bad(format!("path `{p}` escapes the dataset root")));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for id in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if !ids.contains(id.as_str()) {
                return Err(bad(format!("split references unknown id `{id}`")));
            }
            if !seen.insert(id.as_str()) {
                return Err(bad(format!("id `{id}` is in more than one split")));
            }
        }
        if self.resolution == 0 && !self.samples.is_empty() {
            return Err(bad("zero resolution".into()));
        }
        Ok(())
    }

    pub fn split_ids(&self, split: Split) -> Vec<&str> {
        let list = match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
            Split::All => return self.samples.iter().map(|s| s.id.as_str()).collect(),
        };
        list.iter().map(String::as_str).collect()
    }
}

/// Mapping from raw label keys (pixel values for indexed masks, file-name
/// suffixes for per-region binaries) to taxonomy region names or
/// `background`.
///
/// Text form: one `base = meta` per line, `#` comments. For per-region
/// binaries later lines paint over earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BaseToMeta {
    pub entries: Vec<(String, String)>,
}

pub const BACKGROUND_NAME: &str = "background";

impl BaseToMeta {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut keys = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("label map line {}: expected `base = meta`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::Config(format!("label map line {}: empty key or value", n + 1)));
            }
            if !keys.insert(k.to_string()) {
                return Err(Error::Config(format!("label map line {}: duplicate key `{k}`", n + 1)));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Every region index `i` mapped from the key `i`, plus `N` to background:
    /// for datasets whose masks already carry taxonomy labels.
    pub fn identity(taxonomy: &RegionTaxonomy) -> Self {
        let mut entries: Vec<(String, String)> = taxonomy
            .region_names()
            .iter()
            .enumerate()
            .map(|(i, n)| (i.to_string(), n.clone()))
            .collect();
        entries.push((taxonomy.len().to_string(), BACKGROUND_NAME.into()));
        Self { entries }
    }

    /// CelebAMask-HQ part names grouped into the built-in face taxonomy;
    /// both lips join the mouth.
    pub fn celebamask_hq() -> Self {
        let pairs = [
            ("skin", "skin"),
            ("nose", "nose"),
            ("eye_g", "glasses"),
            ("l_eye", "eye_l"),
            ("r_eye", "eye_r"),
            ("l_brow", "brow_l"),
            ("r_brow", "brow_r"),
            ("l_ear", "ear_l"),
            ("r_ear", "ear_r"),
            ("mouth", "mouth"),
            ("u_lip", "mouth"),
            ("l_lip", "mouth"),
            ("hair", "hair"),
            ("hat", "hat"),
            ("ear_r", "earring"),
            ("neck_l", "neck"),
            ("neck", "neck"),
            ("cloth", "cloth"),
        ];
        Self {
            entries: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    /// Resolves meta names to label values.
    fn resolve(&self, taxonomy: &RegionTaxonomy) -> Result<Vec<(String, u8)>> {
        self.entries
            .iter()
            .map(|(k, v)| {
                let label = if v == BACKGROUND_NAME {
                    taxonomy.background_index()
                } else {
                    taxonomy.index_of(v).ok_or_else(|| {
                        Error::Config(format!("label map target `{v}` is not a region of `{}`", taxonomy.name()))
                    })?
                };
                Ok((k.clone(), label as u8))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Output side length; defaults to the mask size of the first sample.
    pub resolution: Option<usize>,
    /// Fractions of ids (in sorted order, from the end) for test and val.
    pub test_fraction: f64,
    pub val_fraction: f64,
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn list_dir(dir: &Path) -> Result<Vec<String>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for e in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let e = e.map_err(io_err(dir))?;
        if e.file_type().map_err(io_err(e.path()))?.is_file() {
            if let Some(n) = e.file_name().to_str() {
                names.push(n.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn load_gray(path: &Path) -> Result<image::GrayImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8())
}

fn resize_nearest(img: &image::GrayImage, r: usize) -> image::GrayImage {
    if img.dimensions() == (r as u32, r as u32) {
        return img.clone();
    }
    image::imageops::resize(img, r as u32, r as u32, image::imageops::FilterType::Nearest)
}

/// Normalizes the raw dataset under `root` into taxonomy labels.
pub fn ingest(root: &Path, taxonomy: &RegionTaxonomy, map: &BaseToMeta, opts: &IngestOptions) -> Result<DatasetManifest> {
    let labels = map.resolve(taxonomy)?;
    let by_key: BTreeMap<&str, u8> = labels.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    let out_dir = root.join("meta_masks");
    let mask_files = list_dir(&masks_dir)?;

    let images: Vec<(String, String)> = list_dir(&images_dir)?
        .into_iter()
        .filter_map(|file| {
            let (id, ext) = file.rsplit_once('.')?;
            IMAGE_EXTS
                .contains(&ext.to_ascii_lowercase().as_str())
                .then(|| (id.to_string(), file.clone()))
        })
        .collect();
    // per-region files belong to the longest image id they extend
    let mut parts_of: BTreeMap<&str, Vec<(String, PathBuf)>> = BTreeMap::new();
    for f in &mask_files {
        let Some(stem) = f.strip_suffix(".png") else { continue };
        let owner = images
            .iter()
            .filter(|(id, _)| stem.len() > id.len() + 1 && stem.starts_with(id.as_str()) && stem.as_bytes()[id.len()] == b'_')
            .max_by_key(|(id, _)| id.len());
        if let Some((id, _)) = owner {
            parts_of
                .entry(id.as_str())
                .or_default()
                .push((stem[id.len() + 1..].to_string(), masks_dir.join(f)));
        }
    }

    let mut resolution = opts.resolution;
    let mut samples = Vec::new();
    for (id, file) in &images {
        let id = id.as_str();
        let indexed = masks_dir.join(format!("{id}.png"));
        let parts = parts_of.remove(id).unwrap_or_default();
        let grid = if indexed.is_file() {
            let img = load_gray(&indexed)?;
            let r = *resolution.get_or_insert(img.width() as usize);
            if img.width() != img.height() {
                return Err(ingest_err(&indexed, "mask is not square"));
            }
            let img = resize_nearest(&img, r);
            let mut out = Vec::with_capacity(r * r);
            for &v in img.as_raw() {
                let l = by_key
                    .get(v.to_string().as_str())
                    .ok_or_else(|| ingest_err(&indexed, format!("unknown label value {v}")))?;
                out.push(*l);
            }
            out
        } else if !parts.is_empty() {
            let mut layers = Vec::new();
            for (key, path) in parts {
                let order = labels
                    .iter()
                    .position(|(k, _)| *k == key)
                    .ok_or_else(|| ingest_err(&path, format!("unknown label `{key}`")))?;
                layers.push((order, labels[order].1, path));
            }
            layers.sort();
            let mut out: Option<Vec<u8>> = None;
            for (_, l, path) in layers {
                let img = load_gray(&path)?;
                if img.width() != img.height() {
                    return Err(ingest_err(&path, "mask is not square"));
                }
                let r = *resolution.get_or_insert(img.width() as usize);
                let img = resize_nearest(&img, r);
                let grid = out.get_or_insert_with(|| vec![taxonomy.background_index() as u8; r * r]);
                for (g, &v) in grid.iter_mut().zip(img.as_raw()) {
                    if v != 0 {
                        *g = l;
                    }
                }
            }
            out.expect("at least one layer")
        } else {
            log::warn!("sample `{id}` has no mask, skipped");
            continue;
        };
        let r = resolution.expect("set by the first mask");
        std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
        let mask = SemanticMask::new(r, r, grid, id)?;
        mask.validate(taxonomy)?;
        let rel = format!("meta_masks/{id}.png");
        mask.save_png(&root.join(&rel))?;
        samples.push(SampleEntry {
            id: id.to_string(),
            image: format!("images/{file}"),
            mask: rel,
        });
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let n = ids.len();
    let n_test = ((n as f64) * opts.test_fraction.clamp(0.0, 1.0)).round() as usize;
    let n_val = (((n as f64) * opts.val_fraction.clamp(0.0, 1.0)).round() as usize).min(n - n_test);
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        taxonomy: taxonomy.clone(),
        resolution: resolution.unwrap_or(0),
        samples,
        splits: Splits {
            train: ids[..n - n_test - n_val].to_vec(),
            val: ids[n - n_test - n_val..n - n_test].to_vec(),
            test: ids[n - n_test..].to_vec(),
        },
    };
    if root.is_dir() {
        manifest.save()?;
    }
    Ok(manifest)
}

/// One loaded sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: SourceId,
    pub image: RgbImage,
    pub mask: SemanticMask,
}

/// All samples of a manifest, decoded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn open(manifest: DatasetManifest) -> Result<Self> {
        let r = manifest.resolution;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in &manifest.samples {
            let mask = SemanticMask::load_png(&manifest.root.join(&e.mask), e.id.as_str())?;
            mask.validate(&manifest.taxonomy)?;
            if (mask.height(), mask.width()) != (r, r) {
                return Err(ingest_err(&manifest.root.join(&e.mask), format!("mask is not {r}x{r}")));
            }
            let path = manifest.root.join(&e.image);
            let img = image::open(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            let mut rgb = img.to_rgb8();
            if rgb.dimensions() != (r as u32, r as u32) {
                rgb = image::imageops::resize(&rgb, r as u32, r as u32, image::imageops::FilterType::Triangle);
            }
            samples.push(Sample {
                id: SourceId::new(e.id.clone()),
                image: RgbImage::from_rgb8(&rgb),
                mask,
            });
        }
        let index = samples.iter().enumerate().map(|(k, s)| (s.id.0.clone(), k)).collect();
        Ok(Self { manifest, samples, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::open(DatasetManifest::load(path)?)
    }

    pub fn taxonomy(&self) -> &RegionTaxonomy {
        &self.manifest.taxonomy
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&k| &self.samples[k])
    }

    /// Sample positions of a split.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .split_ids(split)
            .into_iter()
            .filter_map(|id| self.index.get(id).copied())
            .collect()
    }
}
