//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "RMXCKPT\0" | u32 version | u32 manifest_len | manifest JSON
//! u32 array_count | { u16 name_len | name | u8 ndim | u32 dims[ndim] | f32 data[] }*
//! ```
//!
//! Parameter arrays are named `param/<name>`, power-iteration vectors
//! `sn_u/<name>` and `sn_v/<name>`; anything else (optimizer moments, for
//! instance) is carried through as an extra array.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use regionmix_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::bundle::NetworkBundle;
use super::nets::{NetConfig, Networks};
use super::params::{ParamStore, SpectralState};
use crate::error::{io_err, Error, Result};
use crate::taxonomy::RegionTaxonomy;

pub const MAGIC: &[u8; 8] = b"RMXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const MAX_NDIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub taxonomy: RegionTaxonomy,
    pub regions: usize,
    pub style_dim: usize,
    pub resolution: usize,
    pub step: u64,
    pub config: NetConfig,
}

impl CheckpointManifest {
    pub fn for_bundle(bundle: &NetworkBundle) -> Self {
        let c = bundle.config();
        Self {
            taxonomy: bundle.taxonomy.clone(),
            regions: c.regions,
            style_dim: c.style_dim,
            resolution: c.resolution,
            step: bundle.step,
            config: c.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if self.regions != self.taxonomy.len()
            || self.regions != c.regions
            || self.style_dim != c.style_dim
            || self.resolution != c.resolution
        {
            return Err(Error::Checkpoint(format!(
                "inconsistent manifest: N = {}, taxonomy `{}` has {}, config has N = {}, δ = {}/{}, resolution = {}/{}",
                self.regions,
                self.taxonomy.name(),
                self.taxonomy.len(),
                c.regions,
                self.style_dim,
                c.style_dim,
                self.resolution,
                c.resolution
            )));
        }
        Ok(())
    }
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub arrays: BTreeMap<String, Tensor<f32>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Checkpoint {
    pub fn from_bundle(bundle: &NetworkBundle, extra: &BTreeMap<String, Tensor<f64>>) -> Self {
        let mut arrays = BTreeMap::new();
        for (name, t) in bundle.params.iter() {
            arrays.insert(format!("param/{name}"), t.cast::<f32>());
        }
        for (name, st) in bundle.params.spectral_iter() {
            arrays.insert(format!("sn_u/{name}"), Tensor::<f32>::from_f64(&[st.u.len()], &st.u));
            arrays.insert(format!("sn_v/{name}"), Tensor::<f32>::from_f64(&[st.v.len()], &st.v));
        }
        for (name, t) in extra {
            arrays.insert(name.clone(), t.cast::<f32>());
        }
        Self {
            manifest: CheckpointManifest::for_bundle(bundle),
            arrays,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize || t.ndim() > MAX_NDIM {
                return Err(Error::Checkpoint(format!("array `{name}` cannot be encoded")));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mlen = r.u32()? as usize;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        manifest.validate()?;
        let count = r.u32()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u8()? as usize;
            if ndim > MAX_NDIM {
                return Err(Error::Checkpoint(format!("array `{name}` has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = r.u32()? as usize;
                numel = numel
                    .checked_mul(d)
                    .filter(|&n| n <= r.remaining() / 4)
                    .ok_or_else(|| Error::Checkpoint(format!("array `{name}` exceeds file size")))?;
                shape.push(d);
            }
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if arrays.insert(name.clone(), Tensor::new(&shape, data)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { manifest, arrays })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the bundle, checking every declared parameter is present
    /// with the declared shape. Returns the extra arrays alongside.
    pub fn into_bundle(self) -> Result<(NetworkBundle, BTreeMap<String, Tensor<f64>>)> {
        let m = self.manifest;
        let nets = Networks::new(m.config.clone())?;
        let mut arrays = self.arrays;
        let mut params = ParamStore::new();
        for spec in nets.param_specs() {
            let name = &spec.name;
            let got = arrays
                .remove(&format!("param/{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if got.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    spec.shape
                )));
            }
            if !got.all_finite() {
                return Err(Error::Checkpoint(format!("parameter `{name}` is not finite")));
            }
            if spec.spectral {
                let rows = spec.shape[0];
                let cols = got.numel() / rows.max(1);
                let mut vec_of = |kind: &str, len: usize| -> Result<Vec<f64>> {
                    let t = arrays
                        .remove(&format!("{kind}/{name}"))
                        .ok_or_else(|| Error::Checkpoint(format!("missing {kind} for `{name}`")))?;
                    if t.numel() != len || !t.all_finite() {
                        return Err(Error::Checkpoint(format!("{kind} for `{name}` is malformed")));
                    }
                    Ok(t.to_f64_vec())
                };
                let u = vec_of("sn_u", rows)?;
                let v = vec_of("sn_v", cols)?;
                params.set_spectral(name.clone(), SpectralState { u, v });
            }
            params.insert(name.clone(), got.cast::<f64>());
        }
        if let Some(stray) = arrays.keys().find(|k| k.starts_with("param/") || k.starts_with("sn_")) {
            return Err(Error::Checkpoint(format!("unexpected array `{stray}`")));
        }
        let extra = arrays.into_iter().map(|(k, t)| (k, t.cast::<f64>())).collect();
        Ok((
            NetworkBundle {
                taxonomy: m.taxonomy,
                nets,
                params,
                step: m.step,
            },
            extra,
        ))
    }
}

impl NetworkBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_bundle(self, &BTreeMap::new()).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Checkpoint::load(path)?.into_bundle()?.0)
    }

    /// Loads and checks the manifest against an expected taxonomy and
    /// architecture.
    pub fn load_expecting(path: &Path, taxonomy: &RegionTaxonomy, config: &NetConfig) -> Result<Self> {
        let b = Self::load(path)?;
        if &b.taxonomy != taxonomy {
            return Err(Error::Checkpoint(format!(
                "checkpoint taxonomy `{}` does not match `{}`",
                b.taxonomy.name(),
                taxonomy.name()
            )));
        }
        if b.config() != config {
            return Err(Error::Checkpoint("checkpoint architecture differs from config".into()));
        }
        Ok(b)
    }
}
