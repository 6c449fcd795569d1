//! Request → spec → synthesis, shared by the `synthesize` command and the
//! HTTP service.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use regionmix::composition::{CompositionKind, CompositionSpec};
use regionmix::data::Dataset;
use regionmix::image::RgbImage;
use regionmix::mask::{SemanticMask, SourceId};
use regionmix::metrics::image_scores;
use regionmix::nn::{NetworkBundle, Synthesis};
use regionmix::taxonomy::RegionTaxonomy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

/// A loaded checkpoint; immutable once shared.
pub struct Snapshot {
    pub bundle: NetworkBundle,
    /// Hex SHA-256 prefix of the checkpoint file.
    pub checkpoint_id: String,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Self, ApiError> {
        let bytes = std::fs::read(path).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
        let ckpt = regionmix::nn::Checkpoint::from_bytes(&bytes)?;
        let (bundle, _) = ckpt.into_bundle()?;
        Ok(Self {
            bundle,
            checkpoint_id: hex_prefix(&Sha256::digest(&bytes), 16),
        })
    }
}

pub fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    s.truncate(chars);
    s
}

/// Body of `POST /synthesize` and the `synthesize` spec file. Keys of
/// `assignments` are region indices or region names.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub assignments: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_result: Option<String>,
}

/// Body of `POST /edit`. A `null` replacement removes the region.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub prev_result_id: String,
    #[serde(default)]
    pub replacements: BTreeMap<String, Option<String>>,
}

/// Output of one synthesis before it is stored.
pub struct Rendered {
    pub spec: CompositionSpec,
    pub synthesis: Synthesis,
    pub result_id: String,
    pub checkpoint_id: String,
    pub timing_ms: f64,
    /// SSIM against the source when every region came from one source.
    pub reconstruction_ssim: Option<f64>,
}

pub struct Engine {
    snapshot: RwLock<Arc<Snapshot>>,
    pub dataset: Arc<Dataset>,
}

impl Engine {
    pub fn new(snapshot: Snapshot, dataset: Arc<Dataset>) -> Result<Self, ApiError> {
        check_compatible(&snapshot, &dataset)?;
        Ok(Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            dataset,
        })
    }

    /// The current snapshot; requests hold on to it for their whole lifetime.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Replaces the loaded checkpoint; in-flight requests finish on the old one.
    pub fn swap(&self, snapshot: Snapshot) -> Result<(), ApiError> {
        check_compatible(&snapshot, &self.dataset)?;
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
        Ok(())
    }

    pub fn taxonomy(&self) -> &RegionTaxonomy {
        self.dataset.taxonomy()
    }

    pub fn region_index(&self, key: &str) -> Result<usize, ApiError> {
        let tax = self.taxonomy();
        let i = match key.parse::<usize>() {
            Ok(i) => i,
            Err(_) => tax.index_of(key).ok_or_else(|| ApiError::Invalid {
                rule: "known region".into(),
                detail: format!("no region named `{key}`"),
            })?,
        };
        if i >= tax.len() {
            return Err(ApiError::Invalid {
                rule: "known region".into(),
                detail: format!("region index {i} outside 0..{}", tax.len()),
            });
        }
        Ok(i)
    }

    fn source_mask(&self, id: &str) -> Result<&SemanticMask, ApiError> {
        self.dataset
            .get(id)
            .map(|s| &s.mask)
            .ok_or_else(|| ApiError::NotFound(format!("unknown source id `{id}`")))
    }

    /// Sets region `i` and, atomically, the rest of its symmetry group to
    /// `source`; group members the source lacks become absent. Explicitly
    /// named regions must exist in their source.
    fn assign(&self, spec: &mut CompositionSpec, i: usize, source: Option<&str>) -> Result<(), ApiError> {
        let tax = self.taxonomy();
        let group: Vec<usize> = tax.group_of(i).map(|g| g.to_vec()).unwrap_or_else(|| vec![i]);
        let Some(src) = source else {
            for j in group {
                spec.assignments[j] = None;
            }
            return Ok(());
        };
        let mask = self.source_mask(src)?;
        if !mask.contains_region(i) {
            return Err(ApiError::Invalid {
                rule: "region present in source".into(),
                detail: format!("source `{src}` has no `{}`", tax.region_name(i).unwrap_or("?")),
            });
        }
        for j in group {
            spec.assignments[j] = mask.contains_region(j).then(|| SourceId::new(src));
        }
        Ok(())
    }

    /// Builds a spec from request assignments, auto-completing symmetry
    /// groups. Two members of one group naming different sources is a
    /// symmetry-coherence violation.
    pub fn spec_from_assignments(&self, assignments: &BTreeMap<String, String>) -> Result<CompositionSpec, ApiError> {
        let tax = self.taxonomy();
        if assignments.is_empty() {
            return Err(ApiError::Invalid {
                rule: "non-empty composition".into(),
                detail: "no regions assigned".into(),
            });
        }
        let mut explicit: BTreeMap<usize, &str> = BTreeMap::new();
        for (k, v) in assignments {
            let i = self.region_index(k)?;
            if explicit.insert(i, v.as_str()).is_some_and(|prev| prev != v) {
                return Err(ApiError::Invalid {
                    rule: "region uniqueness".into(),
                    detail: format!("region `{}` assigned twice", tax.region_name(i).unwrap_or("?")),
                });
            }
        }
        for (&i, &s) in &explicit {
            for &j in tax.group_of(i).unwrap_or(&[]) {
                if let Some(&t) = explicit.get(&j) {
                    if t != s {
                        return Err(ApiError::Invalid {
                            rule: "symmetry coherence".into(),
                            detail: format!(
                                "`{}` from `{s}` but `{}` from `{t}`",
                                tax.region_name(i).unwrap_or("?"),
                                tax.region_name(j).unwrap_or("?")
                            ),
                        });
                    }
                }
            }
        }
        let mut spec = CompositionSpec::absent(tax, CompositionKind::Random);
        for (&i, &s) in &explicit {
            self.assign(&mut spec, i, Some(s))?;
        }
        finish_spec(spec, tax)
    }

    /// The previous provenance with `replacements` applied group-wise.
    pub fn spec_from_edit(
        &self,
        previous: &BTreeMap<usize, String>,
        replacements: &BTreeMap<String, Option<String>>,
    ) -> Result<CompositionSpec, ApiError> {
        let tax = self.taxonomy();
        let mut spec = CompositionSpec::absent(tax, CompositionKind::Random);
        for (&i, s) in previous {
            if i < tax.len() {
                spec.assignments[i] = Some(SourceId::new(s.as_str()));
            }
        }
        let mut seen: BTreeMap<usize, Option<&str>> = BTreeMap::new();
        for (k, v) in replacements {
            let i = self.region_index(k)?;
            let unit = tax.group_of(i).map(|g| g[0]).unwrap_or(i);
            if let Some(prev) = seen.insert(unit, v.as_deref()) {
                if prev != v.as_deref() {
                    return Err(ApiError::Invalid {
                        rule: "symmetry coherence".into(),
                        detail: format!(
                            "conflicting replacements for the group of `{}`",
                            tax.region_name(i).unwrap_or("?")
                        ),
                    });
                }
            }
            self.assign(&mut spec, i, v.as_deref())?;
        }
        if spec.assigned_count() == 0 {
            return Err(ApiError::Invalid {
                rule: "non-empty composition".into(),
                detail: "the edit removes every region".into(),
            });
        }
        finish_spec(spec, tax)
    }

    /// Runs the networks on `spec`. Deterministic: the same spec and
    /// checkpoint give the same pixels.
    pub fn render(&self, spec: CompositionSpec) -> Result<Rendered, ApiError> {
        let snap = self.snapshot();
        let started = Instant::now();
        let ids = spec.sources();
        let mut sources: Vec<(&SemanticMask, &RgbImage)> = Vec::with_capacity(ids.len());
        for id in &ids {
            let s = self
                .dataset
                .get(id.as_str())
                .ok_or_else(|| ApiError::NotFound(format!("unknown source id `{id}`")))?;
            sources.push((&s.mask, &s.image));
        }
        let synthesis = snap.bundle.synthesize(&spec, &sources)?;
        let reconstruction_ssim = match sources.as_slice() {
            [(_, img)] => Some(image_scores(&synthesis.image, img)?.ssim),
            _ => None,
        };
        if let Some(s) = reconstruction_ssim {
            log::info!("single-source synthesis of `{}`: SSIM {s:.4} vs source", ids[0]);
        }
        Ok(Rendered {
            result_id: result_id(&spec, &snap.checkpoint_id),
            checkpoint_id: snap.checkpoint_id.clone(),
            spec,
            synthesis,
            timing_ms: started.elapsed().as_secs_f64() * 1e3,
            reconstruction_ssim,
        })
    }
}

fn check_compatible(snapshot: &Snapshot, dataset: &Dataset) -> Result<(), ApiError> {
    let b = &snapshot.bundle;
    if &b.taxonomy != dataset.taxonomy() {
        return Err(ApiError::Internal(format!(
            "checkpoint taxonomy `{}` differs from the dataset's `{}`",
            b.taxonomy.name(),
            dataset.taxonomy().name()
        )));
    }
    if b.config().resolution != dataset.manifest.resolution {
        return Err(ApiError::Internal(format!(
            "checkpoint resolution {} differs from the dataset's {}",
            b.config().resolution,
            dataset.manifest.resolution
        )));
    }
    Ok(())
}

fn finish_spec(mut spec: CompositionSpec, tax: &RegionTaxonomy) -> Result<CompositionSpec, ApiError> {
    if spec.sources().len() == 1 {
        spec.kind = CompositionKind::Known;
    }
    spec.validate(tax)?;
    Ok(spec)
}

/// Content hash of `(spec, checkpoint id)`.
pub fn result_id(spec: &CompositionSpec, checkpoint_id: &str) -> String {
    let canonical = serde_json::json!({ "checkpoint": checkpoint_id, "spec": spec });
    hex_prefix(&Sha256::digest(canonical.to_string().as_bytes()), 24)
}

/// `region index → source id` of a spec.
pub fn provenance(spec: &CompositionSpec) -> BTreeMap<usize, String> {
    spec.assignments
        .iter()
        .enumerate()
        .filter_map(|(i, s)| Some((i, s.as_ref()?.0.clone())))
        .collect()
}
