//! Evaluation of a trained checkpoint on a dataset split: known-composition
//! reconstruction and random multi-source compositions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionmix::composition::make_known_spec;
use regionmix::data::{make_batch, Dataset};
use regionmix::metrics::{evaluate, EvalPair, EvalReport, FeatureExtractor};
use regionmix::nn::{NetworkBundle, Synthesis};
use regionmix::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnownEval {
    pub report: EvalReport,
    /// Mean IoU of hardened output regions against the source regions,
    /// over every region present in a source.
    pub mean_region_iou: f64,
    pub region_count: usize,
}

/// Reconstructs every sample in `indices` from its own known composition.
pub fn evaluate_known(
    bundle: &NetworkBundle,
    dataset: &Dataset,
    indices: &[usize],
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<KnownEval> {
    let tax = dataset.taxonomy();
    let mut outputs: Vec<Synthesis> = Vec::with_capacity(indices.len());
    let (mut iou_sum, mut count) = (0.0, 0usize);
    for &k in indices {
        let s = &dataset.samples[k];
        let spec = make_known_spec(&s.mask, tax);
        let out = bundle.synthesize(&spec, &[(&s.mask, &s.image)])?;
        for i in s.mask.present_regions(tax) {
            iou_sum += out.mask.extract_region(tax, i)?.iou(&s.mask.extract_region(tax, i)?);
            count += 1;
        }
        outputs.push(out);
    }
    let pairs: Vec<EvalPair> = indices
        .iter()
        .zip(&outputs)
        .map(|(&k, out)| {
            let s = &dataset.samples[k];
            EvalPair {
                id: s.id.0.clone(),
                pred: &out.image,
                target: &s.image,
                mask: Some(&s.mask),
            }
        })
        .collect();
    Ok(KnownEval {
        report: evaluate(&pairs, tax, extractor)?,
        mean_region_iou: if count > 0 { iou_sum / count as f64 } else { 0.0 },
        region_count: count,
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RandomEval {
    pub results: usize,
    /// Results whose fuzzy composition is a valid distribution per pixel.
    pub valid: usize,
    /// Assigned (region, source) pairs.
    pub regions: usize,
    pub iou_mean: f64,
    pub iou_min: f64,
    pub iou_at_least_0_3: f64,
    /// Regions with at least one other in-batch source to confuse them with.
    pub style_regions: usize,
    /// Fraction of those whose generated mean color is closest to the assigned source.
    pub style_fraction: f64,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// Synthesizes the random compositions of `batches` batches of size
/// `omega` drawn from `pool`.
pub fn evaluate_random(
    bundle: &NetworkBundle,
    dataset: &Dataset,
    pool: &[usize],
    omega: usize,
    batches: usize,
    seed: u64,
) -> Result<RandomEval> {
    let tax = dataset.taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ious = Vec::new();
    let mut e = RandomEval::default();
    let mut matched = 0usize;
    for _ in 0..batches {
        let b = make_batch(dataset, pool, omega, false, &mut rng)?;
        let sources: Vec<_> = b.masks.iter().zip(&b.images).collect();
        for (spec, slots) in b.random.iter().zip(&b.random_sources) {
            let used: Vec<_> = spec
                .sources()
                .iter()
                .map(|id| sources[b.masks.iter().position(|m| m.source_id() == id).expect("resolved")])
                .collect();
            let out = bundle.synthesize(spec, &used)?;
            e.results += 1;
            if out.fuzzy.validate().is_ok() {
                e.valid += 1;
            }
            for (i, slot) in slots.iter().enumerate() {
                let Some(s) = *slot else { continue };
                let generated = out.mask.extract_region(tax, i)?;
                let requested = b.masks[s].extract_region(tax, i)?;
                ious.push(generated.iou(&requested));
                let own = b.images[s].mean_color(&requested).expect("assigned regions are present");
                let others: Vec<[f64; 3]> = (0..b.len())
                    .filter(|&t| b.sample_ids[t] != b.sample_ids[s] && b.masks[t].contains_region(i))
                    .filter_map(|t| b.images[t].mean_color(&b.masks[t].extract_region(tax, i).ok()?))
                    .collect();
                if others.is_empty() {
                    continue;
                }
                e.style_regions += 1;
                if let Some(g) = out.image.mean_color(&generated) {
                    let d_own = dist2(g, own);
                    if others.iter().all(|&o| d_own < dist2(g, o)) {
                        matched += 1;
                    }
                }
            }
        }
    }
    e.regions = ious.len();
    if !ious.is_empty() {
        e.iou_mean = ious.iter().sum::<f64>() / ious.len() as f64;
        e.iou_min = ious.iter().cloned().fold(f64::INFINITY, f64::min);
        e.iou_at_least_0_3 = ious.iter().filter(|&&v| v >= 0.3).count() as f64 / ious.len() as f64;
    }
    if e.style_regions > 0 {
        e.style_fraction = matched as f64 / e.style_regions as f64;
    }
    Ok(e)
}
