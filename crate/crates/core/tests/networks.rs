use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionmix::composition::{make_known_spec, CompositionKind, CompositionSpec};
use regionmix::image::RgbImage;
use regionmix::mask::{RegionSlice, SemanticMask, SourceId};
use regionmix::nn::{
    Binder, Discriminator, MsBlock, MsBlockConfig, NetConfig, NetworkBundle, NormKind, ParamStore,
    RegionContext, Resample,
};
use regionmix::taxonomy::RegionTaxonomy;
use regionmix_autograd::check::{finite_difference, relative_error};
use regionmix_autograd::{Graph, Tensor, Var};

const FD_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random per-pixel distributions over `c` channels.
fn random_fuzzy(b: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[b, c, h, w]);
    let hw = h * w;
    for s in 0..b {
        for p in 0..hw {
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for (k, v) in raw.iter().enumerate() {
                t.data_mut()[(s * c + k) * hw + p] = v / sum;
            }
        }
    }
    t
}

/// Checks analytic gradients of `loss` w.r.t. the input and every parameter
/// against central differences.
fn check_all_grads(
    store: &ParamStore,
    x0: &Tensor<f64>,
    loss: &dyn for<'g> Fn(&Binder<'g, f64>, Var<'g, f64>) -> Var<'g, f64>,
) {
    let g = Graph::<f64>::new();
    let b = Binder::new(&g, store, |_| true);
    let x = g.leaf(x0.clone());
    let grads = g.backward(loss(&b, x));
    let gx = grads.get_or_zeros(x);
    let param_grads = b.gradients(&grads, |v| v);

    let eval = |s: &ParamStore, xin: &Tensor<f64>| {
        let g = Graph::<f64>::new();
        let b = Binder::frozen(&g, s);
        loss(&b, g.constant(xin.clone())).item()
    };
    let fd = finite_difference(|xin| eval(store, xin), x0, 1e-6);
    let err = relative_error(&gx, &fd);
    assert!(err <= FD_TOL, "input gradient relative error {err}");

    for (name, analytic) in &param_grads {
        let p0 = store.get(name).unwrap().clone();
        let fd = finite_difference(
            |p| {
                let mut s = store.clone();
                *s.get_mut(name).unwrap() = p.clone();
                eval(&s, x0)
            },
            &p0,
            1e-6,
        );
        // biases feeding straight into instance normalization have an
        // identically zero gradient; compare those absolutely
        let scale = norm(analytic).max(norm(&fd));
        if scale < 1e-7 {
            continue;
        }
        let err = relative_error(analytic, &fd);
        assert!(err <= FD_TOL, "parameter `{name}` gradient relative error {err}");
    }
}

fn norm(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn block_store(cfg: MsBlockConfig, seed: u64) -> (MsBlock, ParamStore) {
    let block = MsBlock::new("blk", cfg, 3, 4);
    let mut store = ParamStore::new();
    block.declare(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    // nonzero biases so every parameter path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for n in names {
        if n.ends_with(".b") || n.contains("bg_") {
            let shape = store.get(&n).unwrap().shape().to_vec();
            *store.get_mut(&n).unwrap() = random(&shape, &mut rng).map(|v| 0.3 * v);
        }
    }
    (block, store)
}

#[test]
fn ms_block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for resample in [Resample::None, Resample::Down, Resample::Up] {
        for norm in [NormKind::None, NormKind::Instance, NormKind::RegionAdaptive] {
            for out_channels in [2, 3] {
                let cfg = MsBlockConfig {
                    in_channels: 2,
                    out_channels,
                    resample,
                    norm,
                };
                let (block, store) = block_store(cfg, rng.gen());
                let x0 = random(&[1, 2, 4, 4], &mut rng);
                let fuzzy = random_fuzzy(1, 3, 4, 4, &mut rng);
                let style = random(&[1, 3, 2], &mut rng);
                let probe = random(&block_out_shape(&cfg, 4), &mut rng);
                check_all_grads(&store, &x0, &|b, x| {
                    let g = b.graph();
                    let ctx = RegionContext::new(g.constant(fuzzy.clone()), g.constant(style.clone())).unwrap();
                    let y = block.forward(b, x, Some(&ctx)).unwrap();
                    y.mul(g.constant(probe.clone())).sum()
                });
            }
        }
    }
}

fn block_out_shape(cfg: &MsBlockConfig, side: usize) -> Vec<usize> {
    let s = match cfg.resample {
        Resample::None => side,
        Resample::Down => side / 2,
        Resample::Up => side * 2,
    };
    vec![1, cfg.out_channels, s, s]
}

#[test]
fn region_adaptive_gradient_reaches_composition_and_style() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = MsBlockConfig {
        in_channels: 2,
        out_channels: 2,
        resample: Resample::None,
        norm: NormKind::RegionAdaptive,
    };
    let (block, store) = block_store(cfg, 11);
    let x = random(&[1, 2, 4, 4], &mut rng);
    let fuzzy = random_fuzzy(1, 3, 2, 2, &mut rng);
    let probe = random(&[1, 2, 4, 4], &mut rng);
    // style matrix as the differentiated input
    let style0 = random(&[1, 3, 2], &mut rng);
    check_all_grads(&store, &style0, &|b, s| {
        let g = b.graph();
        let ctx = RegionContext::new(g.constant(fuzzy.clone()), s).unwrap();
        let y = block.forward(b, g.constant(x.clone()), Some(&ctx)).unwrap();
        y.mul(g.constant(probe.clone())).sum()
    });
}

#[test]
fn ms_block_shape_contract() {
    let cfg = MsBlockConfig {
        in_channels: 64,
        out_channels: 128,
        resample: Resample::Down,
        norm: NormKind::Instance,
    };
    let block = MsBlock::plain("b", cfg);
    let mut store = ParamStore::new();
    block.declare(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
    let g = Graph::<f32>::new();
    let b = Binder::frozen(&g, &store);
    let x = g.constant(Tensor::full(&[1, 64, 32, 32], 0.5));
    assert_eq!(block.forward(&b, x, None).unwrap().shape(), vec![1, 128, 16, 16]);
}

#[test]
fn zero_weights_reduce_block_to_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for resample in [Resample::None, Resample::Down, Resample::Up] {
        let cfg = MsBlockConfig {
            in_channels: 3,
            out_channels: 3,
            resample,
            norm: NormKind::None,
        };
        let block = MsBlock::plain("b", cfg);
        let mut store = ParamStore::new();
        block.declare(&mut store, &mut rng);
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let g = Graph::<f64>::new();
        let b = Binder::frozen(&g, &store);
        let x = g.constant(random(&[2, 3, 4, 4], &mut rng));
        let y = block.forward(&b, x, None).unwrap();
        let expected = match resample {
            Resample::None => x,
            Resample::Down => x.avg_pool2(),
            Resample::Up => x.upsample2(),
        };
        assert_eq!(y.value().data(), expected.value().data());
    }
}

#[test]
fn region_adaptive_block_requires_context() {
    let cfg = MsBlockConfig {
        in_channels: 2,
        out_channels: 2,
        resample: Resample::None,
        norm: NormKind::RegionAdaptive,
    };
    let (block, store) = block_store(cfg, 1);
    let g = Graph::<f64>::new();
    let b = Binder::frozen(&g, &store);
    let err = block.forward(&b, g.constant(Tensor::zeros(&[1, 2, 4, 4])), None);
    assert!(matches!(err, Err(regionmix::Error::Config(_))));
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (prefix, cin) in [("dm", 4), ("di", 3)] {
        let d = Discriminator::new(prefix, cin, 2, 2);
        let mut store = ParamStore::new();
        d.declare(&mut store, &mut rng);
        let x0 = random(&[1, cin, 4, 4], &mut rng);
        check_all_grads(&store, &x0, &|b, x| d.forward(b, x).unwrap().tanh().sum());
    }
}

#[test]
fn discriminator_shape_and_purity() {
    let d = Discriminator::new("dm", 6, 4, 3);
    let mut store = ParamStore::new();
    d.declare(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
    let x = random(&[2, 6, 16, 16], &mut ChaCha8Rng::seed_from_u64(3)).cast::<f32>();
    let run = || {
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &store);
        let y = d.forward(&b, g.constant(x.clone())).unwrap();
        (*y.value()).clone()
    };
    let y = run();
    assert_eq!(y.shape(), &[2, 1, 2, 2]);
    assert_eq!(y, run());
}

fn tiny_bundle(resolution: usize, seed: u64) -> NetworkBundle {
    let cfg = NetConfig {
        resolution,
        code_size: 16,
        generator_base: 8,
        decoder_width: 16,
        generator_width: 16,
        style_dim: 16,
        modulation_hidden: 16,
        style_width: 8,
        disc_width: 8,
        disc_depth: 2,
        ..NetConfig::with_regions(5)
    };
    NetworkBundle::new(RegionTaxonomy::toy(), cfg, seed).unwrap()
}

fn disk(res: usize, cy: f64, cx: f64, r: f64) -> RegionSlice {
    let data = (0..res * res)
        .map(|p| {
            let (y, x) = ((p / res) as f64, (p % res) as f64);
            (((y - cy).powi(2) + (x - cx).powi(2)).sqrt() <= r) as u8
        })
        .collect();
    RegionSlice {
        height: res,
        width: res,
        data,
    }
}

/// Toy-like mask: face ellipse, two eyes, mouth bar, hair cap.
fn toy_mask(res: usize, shift: i64, id: &str) -> SemanticMask {
    let mut labels = vec![5u8; res * res];
    let c = res as i64 / 2 + shift;
    for y in 0..res as i64 {
        for x in 0..res as i64 {
            let p = (y * res as i64 + x) as usize;
            let (dy, dx) = ((y - c) as f64, (x - c) as f64);
            if (dy / (res as f64 * 0.35)).powi(2) + (dx / (res as f64 * 0.28)).powi(2) <= 1.0 {
                labels[p] = 0;
            }
            if y < c - res as i64 / 4 && labels[p] == 0 {
                labels[p] = 4;
            }
            let eye = |ex: i64| ((y - (c - 3)).pow(2) + (x - ex).pow(2)) <= 4;
            if eye(c - 5) {
                labels[p] = 1;
            }
            if eye(c + 5) {
                labels[p] = 2;
            }
            if (y - (c + 6)).abs() <= 1 && (x - c).abs() <= 4 {
                labels[p] = 3;
            }
        }
    }
    SemanticMask::new(res, res, labels, id).unwrap()
}

fn colored_image(mask: &SemanticMask, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<[f32; 3]> = (0..6)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let (h, w) = (mask.height(), mask.width());
    let mut img = RgbImage::filled(h, w, [0.0; 3]);
    for (p, &l) in mask.labels().iter().enumerate() {
        for c in 0..3 {
            img.data[c * h * w + p] = colors[l as usize][c];
        }
    }
    img
}

#[test]
fn structure_codes_have_fixed_shape_and_zero_for_empty() {
    for res in [32, 64] {
        let bundle = tiny_bundle(res, 1);
        let code = bundle.structure_code(&disk(res, 10.0, 10.0, 4.0), 1).unwrap();
        assert_eq!(code.len(), 16 * 16 * 128);
        let empty = RegionSlice {
            height: res,
            width: res,
            data: vec![0; res * res],
        };
        assert!(bundle.structure_code(&empty, 1).unwrap().iter().all(|&v| v == 0.0));
    }
    let bundle = tiny_bundle(32, 1);
    assert!(matches!(
        bundle.structure_code(&disk(16, 3.0, 3.0, 2.0), 0),
        Err(regionmix::Error::Shape(_))
    ));
}

#[test]
fn distinct_eye_slices_give_distinct_codes() {
    let bundle = tiny_bundle(32, 4);
    let a = bundle.structure_code(&disk(32, 12.0, 10.0, 2.5), 1).unwrap();
    let b = bundle.structure_code(&disk(32, 14.0, 19.0, 3.5), 1).unwrap();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    assert!(dot / (na * nb) < 1.0 - 1e-6);
}

#[test]
fn structure_generate_is_normalized_and_deterministic() {
    let bundle = tiny_bundle(32, 2);
    let tax = RegionTaxonomy::toy();
    let m = toy_mask(32, 0, "a");
    let spec = make_known_spec(&m, &tax);
    let fc = bundle.structure_generate(&spec, &[&m]).unwrap();
    assert!(fc.max_sum_error() <= 1e-5);
    assert!(fc.probs().iter().all(|&p| (0.0..=1.0).contains(&p)));
    let again = bundle.structure_generate(&spec, &[&m]).unwrap();
    assert_eq!(fc.probs(), again.probs());
}

#[test]
fn absent_regions_do_not_influence_the_composition() {
    let bundle = tiny_bundle(32, 3);
    let tax = RegionTaxonomy::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = toy_mask(32, 0, "a");
    let b = toy_mask(32, 2, "b");
    for absent in 0..tax.len() {
        let mut spec = CompositionSpec::absent(&tax, CompositionKind::Random);
        for i in 0..tax.len() {
            if i != absent && !tax.group_of(i).is_some_and(|g| g.contains(&absent)) {
                let key = tax.group_of(i).map_or(i, |g| g[0]);
                spec.assignments[i] = Some(SourceId::from(if key % 2 == 0 { "a" } else { "b" }));
            }
        }
        spec.complete_symmetry(&tax);
        let base = bundle.structure_generate(&spec, &[&a, &b]).unwrap();
        // scribble region `absent` into both sources at random pixels
        for _ in 0..3 {
            let perturb = |m: &SemanticMask, rng: &mut ChaCha8Rng| {
                let mut labels = m.labels().to_vec();
                // toggle pixels between region `absent` and background only
                for _ in 0..200 {
                    let p = rng.gen_range(0..labels.len());
                    if labels[p] == 5 {
                        labels[p] = absent as u8;
                    } else if labels[p] == absent as u8 {
                        labels[p] = 5;
                    }
                }
                SemanticMask::new(32, 32, labels, m.source_id().clone()).unwrap()
            };
            let (a2, b2) = (perturb(&a, &mut rng), perturb(&b, &mut rng));
            let out = bundle.structure_generate(&spec, &[&a2, &b2]).unwrap();
            assert_eq!(out.probs(), base.probs(), "region {absent} leaked");
        }
    }
}

#[test]
fn style_codes_are_local_and_zero_when_absent() {
    let bundle = tiny_bundle(32, 5);
    let m = toy_mask(32, 0, "a");
    let img = colored_image(&m, 1);
    let tax = RegionTaxonomy::toy();
    let slice = m.extract_region(&tax, 3).unwrap();
    let code = bundle.style_code(&img, &slice, 3).unwrap();
    assert_eq!(code.len(), 16);
    assert!(code.iter().any(|&v| v != 0.0));

    let mut noisy = img.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hw = 32 * 32;
    for (p, &s) in slice.data.iter().enumerate() {
        if s == 0 {
            for c in 0..3 {
                noisy.data[c * hw + p] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let code2 = bundle.style_code(&noisy, &slice, 3).unwrap();
    let gap = code.iter().zip(&code2).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(gap <= 1e-6, "exterior pixels moved the code by {gap}");

    let empty = RegionSlice {
        height: 32,
        width: 32,
        data: vec![0; hw],
    };
    assert!(bundle.style_code(&img, &empty, 3).unwrap().iter().all(|&v| v == 0.0));

    let red = RgbImage::filled(32, 32, [0.9, -0.5, -0.5]);
    let blue = RgbImage::filled(32, 32, [-0.5, -0.5, 0.9]);
    assert_ne!(
        bundle.style_code(&red, &slice, 3).unwrap(),
        bundle.style_code(&blue, &slice, 3).unwrap()
    );
}

#[test]
fn style_matrix_columns_follow_taxonomy_order() {
    let bundle = tiny_bundle(32, 6);
    let tax = RegionTaxonomy::toy();
    let m = toy_mask(32, 0, "a");
    let img = colored_image(&m, 4);
    let empty = bundle.build_style_matrix(&BTreeMap::new()).unwrap();
    assert!(empty.data.iter().all(|&v| v == 0.0));
    assert_eq!((empty.style_dim, empty.regions), (16, 5));

    let s1 = m.extract_region(&tax, 1).unwrap();
    let s3 = m.extract_region(&tax, 3).unwrap();
    let mut segs = BTreeMap::new();
    segs.insert(3, (&img, &s3));
    segs.insert(1, (&img, &s1));
    let sm = bundle.build_style_matrix(&segs).unwrap();
    assert_eq!(sm.column(1), bundle.style_code(&img, &s1, 1).unwrap());
    assert_eq!(sm.column(3), bundle.style_code(&img, &s3, 3).unwrap());
    for i in [0, 2, 4] {
        assert!(sm.is_column_zero(i));
    }
}

/// Region-adaptive block with identity-free checks on the normalization.
fn ran_output(store: &ParamStore, x: &Tensor<f64>, fuzzy: &Tensor<f64>, style: &Tensor<f64>) -> Tensor<f64> {
    let ran = regionmix::nn::RegionAdaptiveNorm::new("ran", 2, 3, 4);
    let g = Graph::<f64>::new();
    let b = Binder::frozen(&g, store);
    let ctx = RegionContext::new(g.constant(fuzzy.clone()), g.constant(style.clone())).unwrap();
    let y = ran.forward(&b, g.constant(x.clone()), &ctx).unwrap();
    (*y.value()).clone()
}

fn ran_store(seed: u64) -> ParamStore {
    let ran = regionmix::nn::RegionAdaptiveNorm::new("ran", 2, 3, 4);
    let mut specs = Vec::new();
    ran.specs(&mut specs);
    let mut store = ParamStore::new();
    regionmix::nn::declare_specs(&specs, &mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for (n, t) in store.iter_mut() {
        if n.ends_with(".b") || n.contains("bg_") {
            let shape = t.shape().to_vec();
            *t = random(&shape, &mut rng);
        }
    }
    store
}

#[test]
fn region_adaptive_single_region_applies_its_modulation_globally() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = ran_store(1);
    let x = random(&[1, 2, 4, 4], &mut rng);
    let style = random(&[1, 3, 2], &mut rng);
    // channel 1 everywhere
    let mut fuzzy = Tensor::zeros(&[1, 3, 4, 4]);
    fuzzy.data_mut()[16..32].iter_mut().for_each(|v| *v = 1.0);
    let y = ran_output(&store, &x, &fuzzy, &style);

    // modulation of column 1 computed by hand
    let col: Vec<f64> = (0..3).map(|k| style.data()[k * 2 + 1]).collect();
    let lin = |name: &str, input: &[f64]| -> Vec<f64> {
        let w = store.get(&format!("ran.{name}.w")).unwrap();
        let b = store.get(&format!("ran.{name}.b")).unwrap();
        let (din, dout) = (w.dim(0), w.dim(1));
        (0..dout)
            .map(|o| b.data()[o] + (0..din).map(|i| input[i] * w.data()[i * dout + o]).sum::<f64>())
            .collect()
    };
    let hid: Vec<f64> = lin("mlp", &col).into_iter().map(|v| if v > 0.0 { v } else { 0.2 * v }).collect();
    let (gamma, beta) = (lin("gamma", &hid), lin("beta", &hid));
    for c in 0..2 {
        let plane = &x.data()[c * 16..(c + 1) * 16];
        let mean = plane.iter().sum::<f64>() / 16.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        for p in 0..16 {
            let n = (plane[p] - mean) / (var + 1e-5).sqrt();
            let expected = n * (1.0 + gamma[c]) + beta[c];
            assert!((y.data()[c * 16 + p] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn region_adaptive_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let store = ran_store(2);
    let x = random(&[1, 2, 4, 4], &mut rng);
    let fuzzy = random_fuzzy(1, 3, 4, 4, &mut rng);
    let style = random(&[1, 3, 2], &mut rng);
    let mut pf = fuzzy.clone();
    pf.data_mut()[..16].copy_from_slice(&fuzzy.data()[16..32]);
    pf.data_mut()[16..32].copy_from_slice(&fuzzy.data()[..16]);
    let mut ps = style.clone();
    for k in 0..3 {
        ps.data_mut()[k * 2] = style.data()[k * 2 + 1];
        ps.data_mut()[k * 2 + 1] = style.data()[k * 2];
    }
    let a = ran_output(&store, &x, &fuzzy, &style);
    let b = ran_output(&store, &x, &pf, &ps);
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn region_adaptive_with_zero_style_and_biases_is_instance_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ran_store(3);
    for (n, t) in store.iter_mut() {
        if n.ends_with(".b") || n.contains("bg_") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = random(&[1, 2, 4, 4], &mut rng);
    let fuzzy = random_fuzzy(1, 3, 4, 4, &mut rng);
    let y = ran_output(&store, &x, &fuzzy, &Tensor::zeros(&[1, 3, 2]));
    let g = Graph::<f64>::new();
    let expected = g.constant(x).instance_norm(1e-5);
    assert_eq!(y.data(), expected.value().data());
}

#[test]
fn image_generator_output_is_bounded_and_deterministic() {
    let bundle = tiny_bundle(32, 7);
    let tax = RegionTaxonomy::toy();
    let m = toy_mask(32, 1, "a");
    let img = colored_image(&m, 3);
    let spec = make_known_spec(&m, &tax);
    let out = bundle.synthesize(&spec, &[(&m, &img)]).unwrap();
    assert!(out.image.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    let again = bundle.synthesize(&spec, &[(&m, &img)]).unwrap();
    assert_eq!(out.image, again.image);
    assert_eq!(out.mask, again.mask);
}

#[test]
fn normalized_weights_have_unit_spectral_norm() {
    let bundle = tiny_bundle(32, 8);
    let mut checked = 0;
    for (name, _) in bundle.params.spectral_iter() {
        let w = bundle.params.get(name).unwrap();
        let rows = w.dim(0);
        let cols = w.numel() / rows;
        if rows * cols > 20_000 {
            continue;
        }
        let sigma = bundle.params.sigma_estimate(name).unwrap();
        let m = DMatrix::from_row_slice(rows, cols, w.data());
        let top = m.singular_values().max();
        let normalized = top / sigma;
        assert!(normalized <= 1.0 + 1e-3, "`{name}`: σ(W/σ̂) = {normalized}");
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn encoders_never_share_parameters() {
    let bundle = tiny_bundle(32, 9);
    let names: Vec<&String> = bundle.params.iter().map(|(n, _)| n).collect();
    for i in 0..5 {
        assert!(names.iter().any(|n| n.starts_with(&format!("gm.enc{i}."))));
        assert!(names.iter().any(|n| n.starts_with(&format!("style.enc{i}."))));
    }
    let a = bundle.params.get("gm.enc0.stem.w").unwrap();
    let b = bundle.params.get("gm.enc1.stem.w").unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn checkpoint_round_trip_preserves_inference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut bundle = tiny_bundle(32, 10);
    // round parameters through f32 so the comparison is exact
    for (_, t) in bundle.params.iter_mut() {
        *t = t.cast::<f32>().cast::<f64>();
    }
    bundle.step = 42;
    bundle.save(&path).unwrap();
    let loaded = NetworkBundle::load(&path).unwrap();
    assert_eq!(loaded.step, 42);
    assert_eq!(loaded.params.len(), bundle.params.len());
    for (name, t) in bundle.params.iter() {
        assert_eq!(loaded.params.get(name).unwrap(), t, "{name}");
    }
    let tax = RegionTaxonomy::toy();
    let m = toy_mask(32, 0, "a");
    let img = colored_image(&m, 1);
    let spec = make_known_spec(&m, &tax);
    let a = bundle.synthesize(&spec, &[(&m, &img)]).unwrap();
    let b = loaded.synthesize(&spec, &[(&m, &img)]).unwrap();
    assert_eq!(a.image.to_rgb8(), b.image.to_rgb8());

    let cfg = bundle.config().clone();
    assert!(NetworkBundle::load_expecting(&path, &tax, &cfg).is_ok());
    let other = NetConfig { style_dim: 8, ..cfg };
    assert!(NetworkBundle::load_expecting(&path, &tax, &other).is_err());
    assert!(NetworkBundle::load_expecting(&path, &RegionTaxonomy::face(), bundle.config()).is_err());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let bundle = tiny_bundle(32, 11);
    let bytes = regionmix::nn::Checkpoint::from_bundle(&bundle, &BTreeMap::new()).to_bytes().unwrap();
    use regionmix::nn::Checkpoint;
    assert!(Checkpoint::from_bytes(&bytes).unwrap().into_bundle().is_ok());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}
