//! Bounded on-disk cache of synthesis results, keyed by content hash.
//!
//! Each result lives in `<root>/<id>/` as `image.png`, `mask.png` (label
//! values), `fuzzy.json` and `result.json`. The oldest results are evicted
//! beyond the capacity.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use regionmix::composition::CompositionSpec;
use regionmix::taxonomy::RegionTaxonomy;
use serde::{Deserialize, Serialize};

use crate::engine::{provenance, Rendered};
use crate::error::ApiError;

pub const IMAGE_FILE: &str = "image.png";
pub const MASK_FILE: &str = "mask.png";
pub const FUZZY_FILE: &str = "fuzzy.json";
pub const RECORD_FILE: &str = "result.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result_id: String,
    pub checkpoint: String,
    pub image_url: String,
    pub mask_url: String,
    pub fuzzy_url: String,
    /// Region index → source id, for every assigned region.
    pub provenance: BTreeMap<usize, String>,
    /// The same keyed by region name.
    pub provenance_names: BTreeMap<String, String>,
    pub previous_result: Option<String>,
    /// Result ids from the root of the edit chain to this result.
    pub chain: Vec<String>,
    pub timing_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction_ssim: Option<f64>,
    pub spec: CompositionSpec,
}

#[derive(Serialize, Deserialize)]
pub struct FuzzyFile {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f32>,
}

impl ResultRecord {
    pub fn new(r: &Rendered, taxonomy: &RegionTaxonomy, previous: Option<&ResultRecord>) -> Self {
        let id = &r.result_id;
        let prov = provenance(&r.spec);
        let mut chain = previous.map(|p| p.chain.clone()).unwrap_or_default();
        chain.push(id.clone());
        Self {
            result_id: id.clone(),
            checkpoint: r.checkpoint_id.clone(),
            image_url: format!("/results/{id}/{IMAGE_FILE}"),
            mask_url: format!("/results/{id}/{MASK_FILE}"),
            fuzzy_url: format!("/results/{id}/{FUZZY_FILE}"),
            provenance_names: prov
                .iter()
                .filter_map(|(&i, s)| Some((taxonomy.region_name(i)?.to_string(), s.clone())))
                .collect(),
            provenance: prov,
            previous_result: previous.map(|p| p.result_id.clone()),
            chain,
            timing_ms: r.timing_ms,
            reconstruction_ssim: r.reconstruction_ssim,
            spec: r.spec.clone(),
        }
    }
}

fn internal(path: &Path, e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(format!("{}: {e}", path.display()))
}

/// Writes the files of one result into `dir` (which must exist).
pub fn write_result_files(dir: &Path, r: &Rendered, record: &ResultRecord) -> Result<(), ApiError> {
    r.synthesis.image.save_png(&dir.join(IMAGE_FILE))?;
    r.synthesis.mask.save_png(&dir.join(MASK_FILE))?;
    let f = &r.synthesis.fuzzy;
    let fuzzy = FuzzyFile {
        channels: f.channels(),
        height: f.height(),
        width: f.width(),
        probs: f.probs().to_vec(),
    };
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| internal(&p, e))
    };
    write(FUZZY_FILE, serde_json::to_string(&fuzzy).map_err(|e| internal(dir, e))?)?;
    write(RECORD_FILE, serde_json::to_string_pretty(record).map_err(|e| internal(dir, e))?)?;
    Ok(())
}

pub struct ResultStore {
    root: PathBuf,
    capacity: usize,
    order: Mutex<VecDeque<String>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ResultStore {
    /// Opens (or creates) a store, indexing existing results oldest first.
    pub fn open(root: &Path, capacity: usize) -> Result<Self, ApiError> {
        std::fs::create_dir_all(root).map_err(|e| internal(root, e))?;
        let mut found = Vec::new();
        for e in std::fs::read_dir(root).map_err(|e| internal(root, e))? {
            let e = e.map_err(|e| internal(root, e))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && e.path().join(RECORD_FILE).is_file() {
                let t = e.metadata().and_then(|m| m.modified()).ok();
                found.push((t, name));
            } else if name.starts_with(".tmp-") {
                let _ = std::fs::remove_dir_all(e.path());
            }
        }
        found.sort();
        let store = Self {
            root: root.to_path_buf(),
            capacity: capacity.max(1),
            order: Mutex::new(found.into_iter().map(|(_, n)| n).collect()),
        };
        store.evict();
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.order.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Path of a file of result `id`, if the id is well formed.
    pub fn file(&self, id: &str, name: &str) -> Option<PathBuf> {
        valid_id(id).then(|| self.root.join(id).join(name))
    }

    pub fn get(&self, id: &str) -> Result<Option<ResultRecord>, ApiError> {
        let Some(p) = self.file(id, RECORD_FILE) else {
            return Ok(None);
        };
        match std::fs::read_to_string(&p) {
            Ok(text) => Ok(Some(serde_json::from_str(&text).map_err(|e| internal(&p, e))?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(internal(&p, e)),
        }
    }

    /// Stores a rendered result unless one with the same id exists; returns
    /// the stored record.
    pub fn put(&self, r: &Rendered, record: ResultRecord) -> Result<ResultRecord, ApiError> {
        if let Some(existing) = self.get(&record.result_id)? {
            return Ok(existing);
        }
        let tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempdir_in(&self.root)
            .map_err(|e| internal(&self.root, e))?;
        write_result_files(tmp.path(), r, &record)?;
        let dest = self.root.join(&record.result_id);
        let tmp = tmp.keep();
        if std::fs::rename(&tmp, &dest).is_err() {
            // a concurrent request stored the same content first
            let _ = std::fs::remove_dir_all(&tmp);
            if let Some(existing) = self.get(&record.result_id)? {
                return Ok(existing);
            }
            return Err(internal(&dest, "could not store result"));
        }
        self.order.lock().expect("store lock").push_back(record.result_id.clone());
        self.evict();
        Ok(record)
    }

    fn evict(&self) {
        let mut order = self.order.lock().expect("store lock");
        while order.len() > self.capacity {
            if let Some(old) = order.pop_front() {
                let _ = std::fs::remove_dir_all(self.root.join(&old));
            }
        }
    }
}
