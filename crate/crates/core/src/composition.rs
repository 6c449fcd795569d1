//! Composition specifications, fuzzy compositions and the copy-paste
//! baseline.
//!
//! A [`CompositionSpec`] says which source each region comes from. A *known*
//! spec takes every region from one mask; a *random* spec draws regions from
//! several masks, with each symmetry group taken from a single source.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{SemanticMask, SourceId};
use crate::taxonomy::RegionTaxonomy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionKind {
    Known,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionSpec {
    /// Source for each region index; `None` marks an absent region.
    pub assignments: Vec<Option<SourceId>>,
    pub kind: CompositionKind,
}

impl CompositionSpec {
    pub fn absent(taxonomy: &RegionTaxonomy, kind: CompositionKind) -> Self {
        Self {
            assignments: vec![None; taxonomy.len()],
            kind,
        }
    }

    pub fn source(&self, i: usize) -> Option<&SourceId> {
        self.assignments.get(i).and_then(|s| s.as_ref())
    }

    pub fn assigned_count(&self) -> usize {
        self.assignments.iter().flatten().count()
    }

    /// Distinct sources referenced by the spec, sorted.
    pub fn sources(&self) -> Vec<SourceId> {
        let mut v: Vec<SourceId> = self.assignments.iter().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    /// Checks the spec against `taxonomy`: one entry per region, symmetry
    /// groups drawn from one source, and known specs from a single source.
    pub fn validate(&self, taxonomy: &RegionTaxonomy) -> Result<()> {
        if self.assignments.len() != taxonomy.len() {
            return Err(Error::InvalidComposition {
                rule: "region count",
                detail: format!(
                    "{} assignments for {} regions",
                    self.assignments.len(),
                    taxonomy.len()
                ),
            });
        }
        for g in taxonomy.symmetry_groups() {
            let mut src: Option<&SourceId> = None;
            for &i in g {
                if let Some(s) = &self.assignments[i] {
                    match src {
                        Some(prev) if prev != s => {
                            let names: Vec<&str> =
                                g.iter().filter_map(|&j| taxonomy.region_name(j)).collect();
                            return Err(Error::InvalidComposition {
                                rule: "symmetry coherence",
                                detail: format!(
                                    "group [{}] mixes sources `{prev}` and `{s}`",
                                    names.join(", ")
                                ),
                            });
                        }
                        _ => src = Some(s),
                    }
                }
            }
        }
        if self.kind == CompositionKind::Known && self.sources().len() > 1 {
            return Err(Error::InvalidComposition {
                rule: "known single source",
                detail: format!("known composition references {} sources", self.sources().len()),
            });
        }
        Ok(())
    }

    /// Fills unassigned members of partially specified symmetry groups with
    /// the source of the specified member. Groups that are already mixed are
    /// left alone (and fail [`validate`](Self::validate)).
    pub fn complete_symmetry(&mut self, taxonomy: &RegionTaxonomy) {
        for g in taxonomy.symmetry_groups() {
            let srcs: Vec<&SourceId> = g.iter().filter_map(|&i| self.assignments[i].as_ref()).collect();
            if let Some(first) = srcs.first() {
                if srcs.iter().all(|s| s == first) {
                    let s = (*first).clone();
                    for &i in g {
                        self.assignments[i] = Some(s.clone());
                    }
                }
            }
        }
    }

    /// Indices into `ids` for each region.
    pub fn resolve(&self, ids: &[SourceId]) -> Result<Vec<Option<usize>>> {
        self.assignments
            .iter()
            .map(|a| match a {
                None => Ok(None),
                Some(s) => ids
                    .iter()
                    .position(|id| id == s)
                    .map(Some)
                    .ok_or_else(|| Error::UnknownSource(s.0.clone())),
            })
            .collect()
    }

    /// Builds a spec from `region name → source` pairs.
    pub fn from_named(
        taxonomy: &RegionTaxonomy,
        named: &BTreeMap<String, SourceId>,
        kind: CompositionKind,
    ) -> Result<Self> {
        let mut spec = Self::absent(taxonomy, kind);
        for (name, src) in named {
            let i = taxonomy
                .index_of(name)
                .ok_or_else(|| Error::Taxonomy(format!("unknown region `{name}`")))?;
            spec.assignments[i] = Some(src.clone());
        }
        Ok(spec)
    }

    pub fn to_named(&self, taxonomy: &RegionTaxonomy) -> BTreeMap<String, SourceId> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, s)| Some((taxonomy.region_name(i)?.to_string(), s.clone()?)))
            .collect()
    }
}

/// Every region present in `mask` taken from `mask` itself.
pub fn make_known_spec(mask: &SemanticMask, taxonomy: &RegionTaxonomy) -> CompositionSpec {
    let mut spec = CompositionSpec::absent(taxonomy, CompositionKind::Known);
    for i in mask.present_regions(taxonomy) {
        spec.assignments[i] = Some(mask.source_id().clone());
    }
    spec
}

/// Draws each region (or symmetry group, as a unit) uniformly from the
/// masks that contain it. Group members missing from the chosen source stay
/// absent.
pub fn sample_random_spec<R: Rng + ?Sized>(
    masks: &[SemanticMask],
    taxonomy: &RegionTaxonomy,
    rng: &mut R,
) -> Result<CompositionSpec> {
    if masks.is_empty() {
        return Err(Error::Argument("random composition needs at least one mask".into()));
    }
    let present: Vec<Vec<bool>> = masks
        .iter()
        .map(|m| {
            let mut p = vec![false; taxonomy.len()];
            for i in m.present_regions(taxonomy) {
                p[i] = true;
            }
            p
        })
        .collect();
    let mut spec = CompositionSpec::absent(taxonomy, CompositionKind::Random);
    let mut done = vec![false; taxonomy.len()];
    for i in 0..taxonomy.len() {
        if done[i] {
            continue;
        }
        let unit: Vec<usize> = match taxonomy.group_of(i) {
            Some(g) => g.to_vec(),
            None => vec![i],
        };
        for &j in &unit {
            done[j] = true;
        }
        let candidates: Vec<usize> = (0..masks.len())
            .filter(|&m| unit.iter().any(|&j| present[m][j]))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        for &j in &unit {
            if present[pick][j] {
                spec.assignments[j] = Some(masks[pick].source_id().clone());
            }
        }
    }
    Ok(spec)
}

/// Naive collage: each pixel covered by the slice of (region, assigned
/// source) takes that region's label; overlaps go to the lower region index
/// and uncovered pixels become background.
pub fn assemble_copy_paste(
    spec: &CompositionSpec,
    masks: &[SemanticMask],
    taxonomy: &RegionTaxonomy,
) -> Result<SemanticMask> {
    let ids: Vec<SourceId> = masks.iter().map(|m| m.source_id().clone()).collect();
    let resolved = spec.resolve(&ids)?;
    let first = resolved.iter().flatten().next().map(|&k| &masks[k]);
    let (h, w) = match (first, masks.first()) {
        (Some(m), _) | (None, Some(m)) => (m.height(), m.width()),
        (None, None) => return Err(Error::Argument("copy-paste needs at least one mask".into())),
    };
    let bg = taxonomy.background_index() as u8;
    let mut labels = vec![bg; h * w];
    // highest index first so lower indices overwrite
    for (i, src) in resolved.iter().enumerate().rev() {
        let Some(k) = *src else { continue };
        let m = &masks[k];
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "mask `{}` is {}x{}, expected {h}x{w}",
                m.source_id(),
                m.height(),
                m.width()
            )));
        }
        for (p, &l) in m.labels().iter().enumerate() {
            if l as usize == i {
                labels[p] = i as u8;
            }
        }
    }
    SemanticMask::new(h, w, labels, "copy-paste")
}

/// Soft per-pixel region probabilities, `[N+1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyComposition {
    channels: usize,
    height: usize,
    width: usize,
    probs: Vec<f32>,
}

/// Per-pixel channel sums must be within this of 1.
pub const NORMALIZATION_TOLERANCE: f32 = 1e-5;

impl FuzzyComposition {
    pub fn new(channels: usize, height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        let fc = Self {
            channels,
            height,
            width,
            probs,
        };
        fc.validate()?;
        Ok(fc)
    }

    pub fn from_mask(mask: &SemanticMask, taxonomy: &RegionTaxonomy) -> Self {
        Self {
            channels: taxonomy.channels(),
            height: mask.height(),
            width: mask.width(),
            probs: mask.one_hot(taxonomy.channels()),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn prob(&self, c: usize, y: usize, x: usize) -> f32 {
        self.probs[(c * self.height + y) * self.width + x]
    }

    /// Largest per-pixel deviation of the channel sum from 1.
    pub fn max_sum_error(&self) -> f32 {
        let hw = self.height * self.width;
        (0..hw)
            .map(|p| {
                let s: f32 = (0..self.channels).map(|c| self.probs[c * hw + p]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f32::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.channels * self.height * self.width {
            return Err(Error::Shape(format!(
                "{} probabilities for {}x{}x{}",
                self.probs.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        if let Some(v) = self.probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("probability {v} outside [0, 1]")));
        }
        let err = self.max_sum_error();
        if err > NORMALIZATION_TOLERANCE {
            return Err(Error::Argument(format!(
                "channel sums deviate from 1 by {err}"
            )));
        }
        Ok(())
    }

    /// Per-pixel argmax; ties go to the lowest channel.
    pub fn harden(&self, source_id: impl Into<SourceId>) -> SemanticMask {
        let hw = self.height * self.width;
        let labels = (0..hw)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.probs[c * hw + p] > self.probs[best * hw + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        SemanticMask::new(self.height, self.width, labels, source_id).expect("dimensions match")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(labels: &[u8], id: &str) -> SemanticMask {
        SemanticMask::new(1, labels.len(), labels.to_vec(), id).unwrap()
    }

    #[test]
    fn known_spec_lists_present_regions() {
        let t = RegionTaxonomy::toy();
        let spec = make_known_spec(&mask(&[0, 2, 5, 4, 0], "a"), &t);
        let a = Some(SourceId::from("a"));
        assert_eq!(spec.assignments, vec![a.clone(), None, a.clone(), None, a]);
        assert_eq!(spec.kind, CompositionKind::Known);
        let empty = make_known_spec(&mask(&[5, 5], "a"), &t);
        assert_eq!(empty.assigned_count(), 0);
    }

    #[test]
    fn single_mask_random_equals_known() {
        let t = RegionTaxonomy::toy();
        let m = mask(&[0, 1, 3, 5, 4], "a");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_random_spec(std::slice::from_ref(&m), &t, &mut rng).unwrap();
        assert_eq!(r.assignments, make_known_spec(&m, &t).assignments);
        assert!(sample_random_spec(&[], &t, &mut rng).is_err());
    }

    #[test]
    fn forced_choice_when_one_source_has_the_region() {
        let t = RegionTaxonomy::toy();
        let masks = [mask(&[0, 1, 2, 5], "a"), mask(&[0, 4, 5, 5], "b")];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = sample_random_spec(&masks, &t, &mut rng).unwrap();
            assert_eq!(s.source(4), Some(&SourceId::from("b")));
            assert_eq!(s.source(1), Some(&SourceId::from("a")));
            assert_eq!(s.source(3), None);
        }
    }

    #[test]
    fn validate_names_violated_rule() {
        let t = RegionTaxonomy::toy();
        let mut spec = CompositionSpec::absent(&t, CompositionKind::Random);
        spec.assignments[1] = Some("a".into());
        spec.assignments[2] = Some("b".into());
        match spec.validate(&t) {
            Err(Error::InvalidComposition { rule, .. }) => assert_eq!(rule, "symmetry coherence"),
            other => panic!("unexpected {other:?}"),
        }
        spec.assignments[2] = None;
        spec.validate(&t).unwrap();
        spec.complete_symmetry(&t);
        assert_eq!(spec.source(2), Some(&SourceId::from("a")));
        spec.assignments[0] = Some("c".into());
        spec.kind = CompositionKind::Known;
        assert!(spec.validate(&t).is_err());
    }

    #[test]
    fn copy_paste_all_absent_is_background() {
        let t = RegionTaxonomy::toy();
        let m = mask(&[0, 1, 2], "a");
        let spec = CompositionSpec::absent(&t, CompositionKind::Random);
        let out = assemble_copy_paste(&spec, std::slice::from_ref(&m), &t).unwrap();
        assert_eq!(out.labels(), &[5, 5, 5]);
    }

    #[test]
    fn copy_paste_unknown_source_is_lookup_error() {
        let t = RegionTaxonomy::toy();
        let mut spec = CompositionSpec::absent(&t, CompositionKind::Random);
        spec.assignments[0] = Some("zzz".into());
        let err = assemble_copy_paste(&spec, &[mask(&[0], "a")], &t).unwrap_err();
        assert!(matches!(err, Error::UnknownSource(_)));
    }

    #[test]
    fn harden_breaks_ties_low() {
        let fc = FuzzyComposition::new(3, 1, 2, vec![1.0 / 3.0, 0.2, 1.0 / 3.0, 0.5, 1.0 / 3.0, 0.3]).unwrap();
        assert_eq!(fc.harden("x").labels(), &[0, 1]);
    }

    #[test]
    fn fuzzy_validation() {
        assert!(FuzzyComposition::new(2, 1, 1, vec![0.5, 0.6]).is_err());
        assert!(FuzzyComposition::new(2, 1, 1, vec![1.2, -0.2]).is_err());
        assert!(FuzzyComposition::new(2, 1, 2, vec![0.5, 0.5]).is_err());
    }
}
