//! Batch evaluation: per-sample rows plus an aggregate block.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::frechet::frechet_distance;
use super::pixel::{Flag, Score};
use super::region::{image_scores, per_region_metric, Metric};
use crate::error::Result;
use crate::image::RgbImage;
use crate::mask::SemanticMask;
use crate::taxonomy::RegionTaxonomy;

/// Aggregate scores over a set of samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, Score>,
    /// metric name → region index → score.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_region: BTreeMap<String, BTreeMap<usize, Score>>,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub ssim: f64,
    pub rmse: f64,
    pub rmse_255_div_100: f64,
    pub psnr: Score,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_region: BTreeMap<String, BTreeMap<usize, Score>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SampleRow>,
    pub aggregate: MetricReport,
}

/// One prediction with its reference; `mask` (the reference layout)
/// enables per-region scores.
pub struct EvalPair<'a> {
    pub id: String,
    pub pred: &'a RgbImage,
    pub target: &'a RgbImage,
    pub mask: Option<&'a SemanticMask>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores every pair. PSNR is averaged over finite rows only, with the
/// number of identical pairs reported as `psnr_inf_count`; per-region means
/// skip samples where the region is absent.
pub fn evaluate(
    pairs: &[EvalPair<'_>],
    taxonomy: &RegionTaxonomy,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let s = image_scores(p.pred, p.target)?;
        let mut per_region: BTreeMap<String, BTreeMap<usize, Score>> = BTreeMap::new();
        if let Some(mask) = p.mask {
            for i in 0..taxonomy.len() {
                let slice = mask.region_slice(i);
                for m in Metric::ALL {
                    let v = per_region_metric(m, p.pred, p.target, &slice)?;
                    per_region.entry(m.name().to_string()).or_default().insert(i, v);
                }
            }
        }
        rows.push(SampleRow {
            id: p.id.clone(),
            ssim: s.ssim,
            rmse: s.rmse,
            rmse_255_div_100: s.rmse_255_div_100,
            psnr: s.psnr,
            per_region,
        });
    }

    let mut agg = MetricReport {
        samples: rows.len(),
        ..Default::default()
    };
    let put = |agg: &mut MetricReport, k: &str, v: Option<f64>| {
        agg.metrics.insert(k.into(), v.map_or(Score::Flag(Flag::ABSENT), Score::Value));
    };
    put(&mut agg, "ssim", mean(rows.iter().map(|r| r.ssim)));
    put(&mut agg, "rmse", mean(rows.iter().map(|r| r.rmse)));
    put(&mut agg, "rmse_255_div_100", mean(rows.iter().map(|r| r.rmse_255_div_100)));
    let infs = rows.iter().filter(|r| r.psnr.is_inf()).count();
    let psnr = mean(rows.iter().filter_map(|r| r.psnr.value()));
    agg.metrics.insert(
        "psnr".into(),
        match psnr {
            Some(v) => Score::Value(v),
            None if infs > 0 => Score::Flag(Flag::INF),
            None => Score::Flag(Flag::ABSENT),
        },
    );
    agg.metrics.insert("psnr_inf_count".into(), Score::Value(infs as f64));

    for m in Metric::ALL {
        let mut by_region = BTreeMap::new();
        for i in 0..taxonomy.len() {
            let vals: Vec<Score> = rows
                .iter()
                .filter_map(|r| r.per_region.get(m.name()).and_then(|x| x.get(&i)).copied())
                .collect();
            if vals.is_empty() {
                continue;
            }
            let finite = mean(vals.iter().filter_map(|s| s.value()));
            let score = match finite {
                Some(v) => Score::Value(v),
                None if vals.iter().any(|s| s.is_inf()) => Score::Flag(Flag::INF),
                None => Score::Flag(Flag::ABSENT),
            };
            by_region.insert(i, score);
        }
        if !by_region.is_empty() {
            agg.per_region.insert(m.name().to_string(), by_region);
        }
    }

    if let Some(fx) = extractor {
        let fa: Vec<Vec<f64>> = pairs.iter().map(|p| fx.features(p.pred)).collect();
        let fb: Vec<Vec<f64>> = pairs.iter().map(|p| fx.features(p.target)).collect();
        if pairs.len() >= 2 {
            let f = frechet_distance(&fa, &fb)?;
            agg.metrics.insert("fid_like".into(), Score::Value(f.distance));
            agg.notes.push(format!("fid_like uses the {} extractor; not comparable to published FID", fx.name()));
            if f.ill_conditioned {
                agg.notes.push(format!(
                    "fid_like: {} samples for {}-dimensional features, covariance is rank deficient",
                    pairs.len(),
                    fx.dim()
                ));
            }
        }
    }
    Ok(EvalReport { rows, aggregate: agg })
}
