use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regionmix::data::toy_sample;
use regionmix::image::RgbImage;
use regionmix::mask::RegionSlice;
use regionmix::metrics::{
    evaluate, frechet_distance, image_scores, per_region_metric, psnr, rmse, ssim, EvalPair, FeatureExtractor, Flag,
    Metric, Planes, RandomProjectionCnn, Score,
};
use regionmix::taxonomy::RegionTaxonomy;

fn plane(c: usize, h: usize, w: usize) -> Planes {
    Planes {
        channels: c,
        height: h,
        width: w,
    }
}

/// Direct sliding-window SSIM: explicit 2-D Gaussian weights, per-window
/// moments, no separable filtering.
fn ssim_reference(a: &[f64], b: &[f64], c: usize, h: usize, w: usize, range: f64) -> f64 {
    let mut n = 11.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    let half = (n / 2) as f64;
    let mut wts = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let r2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
            wts[i * n + j] = (-r2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut acc = 0.0;
    let mut count = 0.0;
    for ch in 0..c {
        let at = |img: &[f64], y: usize, x: usize| img[(ch * h + y) * w + x];
        for y in 0..=h - n {
            for x in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        ma += wts[i * n + j] * at(a, y + i, x + j);
                        mb += wts[i * n + j] * at(b, y + i, x + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let (da, db) = (at(a, y + i, x + j) - ma, at(b, y + i, x + j) - mb);
                        va += wts[i * n + j] * da * da;
                        vb += wts[i * n + j] * db * db;
                        cov += wts[i * n + j] * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    acc / count
}

fn random_planes(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn ssim_matches_the_sliding_window_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for &(c, h, w) in &[(1, 16, 16), (3, 16, 16), (3, 20, 13), (2, 7, 9)] {
        let a = random_planes(&mut rng, c * h * w);
        // correlated partner so the score is not near zero
        let b: Vec<f64> = a.iter().map(|v| 0.7 * v + 0.3 * rng.gen_range(0.0..1.0)).collect();
        let got = ssim(&a, &b, plane(c, h, w), 1.0).unwrap();
        let want = ssim_reference(&a, &b, c, h, w, 1.0);
        assert!((got - want).abs() <= 1e-8, "{c}x{h}x{w}: {got} vs {want}");
        assert!((ssim(&b, &a, plane(c, h, w), 1.0).unwrap() - got).abs() < 1e-12);
    }
}

#[test]
fn ssim_identity_and_anticorrelation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_planes(&mut rng, 3 * 16 * 16);
    assert!((ssim(&a, &a, plane(3, 16, 16), 1.0).unwrap() - 1.0).abs() < 1e-12);
    // a checkerboard has (numerically) zero local mean under the Gaussian window
    let n = 24;
    let a: Vec<f64> = (0..n * n).map(|p| if (p / n + p % n) % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let s = ssim(&a, &neg, plane(1, n, n), 1.0).unwrap();
    assert!((s + 1.0).abs() < 1e-2, "{s}");
    assert!(ssim(&a, &neg[1..], plane(1, n, n), 1.0).is_err());
}

#[test]
fn rmse_and_psnr_closed_forms() {
    let shape = plane(3, 8, 8);
    let a = vec![0.25f64; shape.len()];
    assert_eq!(rmse(&a, &a, shape).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a, shape, 1.0).unwrap(), Score::Flag(Flag::INF));
    let zero = vec![0.0f64; shape.len()];
    let off = vec![0.1f64; shape.len()];
    assert!((rmse(&zero, &off, shape).unwrap() - 0.1).abs() < 1e-15);
    match psnr(&zero, &off, shape, 1.0).unwrap() {
        Score::Value(v) => assert!((v - 20.0).abs() < 1e-12, "{v}"),
        other => panic!("{other:?}"),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_planes(&mut rng, shape.len());
    let y = random_planes(&mut rng, shape.len());
    assert_eq!(rmse(&x, &y, shape).unwrap(), rmse(&y, &x, shape).unwrap());
    assert!(rmse(&x, &y[..10], shape).is_err());
}

#[test]
fn image_scores_use_the_unit_scale_and_both_rmse_conventions() {
    let a = RgbImage::filled(16, 16, [-1.0, 0.0, 1.0]);
    // +0.2 on [-1, 1] is +0.1 on [0, 1]
    let b = RgbImage::filled(16, 16, [-0.8, 0.2, 0.8]);
    let s = image_scores(&a, &b).unwrap();
    assert!((s.rmse - 0.1).abs() < 1e-7);
    assert!((s.rmse_255_div_100 - 0.255).abs() < 1e-6);
    assert!((s.psnr.value().unwrap() - 20.0).abs() < 1e-5);
    let same = image_scores(&a, &a).unwrap();
    assert_eq!((same.ssim, same.rmse, same.psnr), (1.0, 0.0, Score::Flag(Flag::INF)));
    assert!(image_scores(&a, &RgbImage::filled(8, 16, [0.0; 3])).is_err());
}

#[test]
fn frechet_of_one_dimensional_gaussians_is_the_squared_mean_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![Normal::new(0.0, 1.0).unwrap().sample(&mut rng)]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![Normal::new(3.0, 1.0).unwrap().sample(&mut rng)]).collect();
    let f = frechet_distance(&a, &b).unwrap();
    assert!((f.distance - 9.0).abs() < 0.2, "{}", f.distance);
    assert!(!f.ill_conditioned);
}

#[test]
fn frechet_matches_the_diagonal_closed_form() {
    // independent axes: Σ (μa−μb)² + Σ (σa−σb)²
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (sa, sb) = ([1.0, 2.0, 0.5], [2.0, 1.0, 0.5]);
    let (ma, mb) = ([0.0, 1.0, -1.0], [1.0, 1.0, 0.0]);
    let draw = |rng: &mut ChaCha8Rng, m: [f64; 3], s: [f64; 3]| -> Vec<Vec<f64>> {
        (0..40_000)
            .map(|_| (0..3).map(|k| Normal::new(m[k], s[k]).unwrap().sample(rng)).collect())
            .collect()
    };
    let a = draw(&mut rng, ma, sa);
    let b = draw(&mut rng, mb, sb);
    let want: f64 = (0..3).map(|k| (ma[k] - mb[k]).powi(2) + (sa[k] - sb[k]).powi(2)).sum();
    let got = frechet_distance(&a, &b).unwrap().distance;
    assert!((got - want).abs() < 0.1, "{got} vs {want}");
}

#[test]
fn frechet_identity_permutation_and_flags() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    assert!(frechet_distance(&a, &a).unwrap().distance < 1e-6);
    let b: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.gen_range(-1.0..2.0)).collect()).collect();
    let mut shuffled = b.clone();
    shuffled.reverse();
    shuffled.swap(3, 77);
    let d1 = frechet_distance(&a, &b).unwrap().distance;
    let d2 = frechet_distance(&a, &shuffled).unwrap().distance;
    assert!((d1 - d2).abs() < 1e-9 && d1 > 0.0);
    assert!((frechet_distance(&b, &a).unwrap().distance - d1).abs() < 1e-9);
    assert!(frechet_distance(&a[..4], &b).unwrap().ill_conditioned);
    let mut bad = a.clone();
    bad[5][1] = f64::NAN;
    assert!(frechet_distance(&bad, &b).is_err());
    assert!(frechet_distance(&a, &[vec![0.0; 3], vec![1.0; 3]]).is_err());
}

fn full_slice(h: usize, w: usize) -> RegionSlice {
    RegionSlice {
        height: h,
        width: w,
        data: vec![1; h * w],
    }
}

#[test]
fn per_region_scores_are_local_and_flag_absent_regions() {
    let tax = RegionTaxonomy::toy();
    let src = toy_sample(32, 4, 0).unwrap();
    let other = toy_sample(32, 4, 1).unwrap();
    let full = full_slice(32, 32);
    let unrestricted = image_scores(&src.image, &other.image).unwrap();
    assert_eq!(
        per_region_metric(Metric::Ssim, &src.image, &other.image, &full).unwrap(),
        Score::Value(unrestricted.ssim)
    );
    assert_eq!(
        per_region_metric(Metric::Rmse, &src.image, &other.image, &full).unwrap(),
        Score::Value(unrestricted.rmse)
    );
    assert_eq!(per_region_metric(Metric::Psnr, &src.image, &other.image, &full).unwrap(), unrestricted.psnr);

    // perturb everything outside the mouth: the mouth's scores do not move
    let mouth = src.mask.extract_region(&tax, 3).unwrap();
    assert!(!mouth.is_empty());
    let mut edited = other.image.clone();
    let hw = 32 * 32;
    for p in 0..hw {
        if mouth.data[p] == 0 {
            for c in 0..3 {
                edited.data[c * hw + p] = -edited.data[c * hw + p];
            }
        }
    }
    for m in Metric::ALL {
        assert_eq!(
            per_region_metric(m, &src.image, &other.image, &mouth).unwrap(),
            per_region_metric(m, &src.image, &edited, &mouth).unwrap(),
            "{m:?}"
        );
    }
    // identical images score perfectly on any region
    for i in 0..5 {
        let s = src.mask.extract_region(&tax, i).unwrap();
        assert_eq!(per_region_metric(Metric::Ssim, &src.image, &src.image, &s).unwrap(), Score::Value(1.0));
        assert_eq!(per_region_metric(Metric::Rmse, &src.image, &src.image, &s).unwrap(), Score::Value(0.0));
    }
    let empty = RegionSlice {
        height: 32,
        width: 32,
        data: vec![0; hw],
    };
    assert!(per_region_metric(Metric::Ssim, &src.image, &other.image, &empty).unwrap().is_absent());
}

#[test]
fn evaluation_rows_and_aggregates() {
    let tax = RegionTaxonomy::toy();
    let samples: Vec<_> = (0..4).map(|i| toy_sample(32, 2, i).unwrap()).collect();
    let pairs: Vec<EvalPair> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| EvalPair {
            id: format!("s{k}"),
            pred: &s.image,
            target: &s.image,
            mask: Some(&s.mask),
        })
        .collect();
    let fx = RandomProjectionCnn::default();
    let rep = evaluate(&pairs, &tax, Some(&fx)).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert!(rep.rows.iter().all(|r| r.ssim == 1.0 && r.psnr.is_inf()));
    assert_eq!(rep.aggregate.metrics["ssim"], Score::Value(1.0));
    assert_eq!(rep.aggregate.metrics["psnr"], Score::Flag(Flag::INF));
    assert_eq!(rep.aggregate.metrics["psnr_inf_count"], Score::Value(4.0));
    assert!(rep.aggregate.metrics["fid_like"].value().unwrap() < 1e-6);
    assert_eq!(rep.aggregate.per_region["ssim"].len(), 5);
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"INF\""));
    let back: regionmix::metrics::EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);

    // a region missing from a reference is skipped, not averaged as zero
    let shifted: Vec<EvalPair> = samples
        .iter()
        .zip(samples.iter().skip(1))
        .map(|(a, b)| EvalPair {
            id: "x".into(),
            pred: &a.image,
            target: &b.image,
            mask: Some(&b.mask),
        })
        .collect();
    let rep = evaluate(&shifted, &tax, None).unwrap();
    let s = rep.aggregate.metrics["ssim"].value().unwrap();
    assert!((-1.0..1.0).contains(&s));
    assert!(rep.aggregate.metrics["rmse"].value().unwrap() > 0.0);
}

#[test]
fn random_projection_features_are_fixed_by_the_seed() {
    let img = toy_sample(64, 0, 0).unwrap().image;
    let a = RandomProjectionCnn::new(1);
    let b = RandomProjectionCnn::new(1);
    let c = RandomProjectionCnn::new(2);
    assert_eq!(a.features(&img), b.features(&img));
    assert_ne!(a.features(&img), c.features(&img));
    assert_eq!(a.features(&img).len(), a.dim());
    assert_eq!(a.dim(), 32);
}
