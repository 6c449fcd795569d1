//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The toy-run criteria evaluate the trained model in `runs/toy/` (override
//! the directory with `REGIONMIX_TOY_RUN`). That directory holds
//! `model.rmx` and `run.json`, which records the dataset parameters and the
//! training budget actually spent.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regionmix::composition::{
    assemble_copy_paste, make_known_spec, sample_random_spec, CompositionKind, CompositionSpec,
};
use regionmix::data::{generate_toy_dataset, toy_sample, Dataset, Split};
use regionmix::mask::{SemanticMask, SourceId};
use regionmix::metrics::{frechet_distance, psnr, rmse, ssim, Planes, Score};
use regionmix::nn::{
    Binder, Discriminator, MsBlock, MsBlockConfig, NetConfig, NetworkBundle, NormKind, ParamStore, RegionContext,
    Resample,
};
use regionmix::taxonomy::RegionTaxonomy;
use regionmix::training::{
    image_adversarial_loss, image_recon_loss, r1_penalty, r1_penalty_with_grads, structure_adversarial_loss,
    structure_recon_loss, style_loss, Critic,
};
use regionmix_autograd::check::{finite_difference, relative_error};
use regionmix_autograd::{Graph, Scalar, Tensor, Var};
use regionmix_cli::eval::{evaluate_known, evaluate_random};
use serde::Deserialize;

// pinned tolerances and thresholds
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const LOSS_ORACLE_TOL: f64 = 1e-9;
const SAMPLER_DRAWS: usize = 1000;
const FUZZY_SUM_TOL: f32 = 1e-5;
const SSIM_REF_TOL: f64 = 1e-8;
const FRECHET_N: usize = 100_000;
const FRECHET_TOL: f64 = 0.2;
const METRIC_BUDGET: Duration = Duration::from_secs(60);
const TOY_MAX_STEPS: u64 = 20_000;
const TOY_MAX_HOURS: f64 = 8.0;
const TOY_TRAIN_SAMPLES: usize = 2000;
const TOY_TEST_SAMPLES: usize = 200;
const TOY_RESOLUTION: usize = 64;
const TOY_OMEGA: usize = 8;
const KNOWN_SSIM_MIN: f64 = 0.6;
const KNOWN_PSNR_MIN: f64 = 18.0;
const KNOWN_IOU_MIN: f64 = 0.6;
const RANDOM_IOU_MIN: f64 = 0.3;
/// Share of assigned regions that must reach `RANDOM_IOU_MIN`.
const RANDOM_IOU_SHARE: f64 = 0.95;
const RANDOM_BATCHES: usize = 25;
const RANDOM_SEED: u64 = 2024;
const STYLE_SHARE_MIN: f64 = 0.70;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &out {
        Ok(d) => println!("PASS  {name:<38} {d} [{secs:.1} s]"),
        Err(d) => println!("FAIL  {name:<38} {d} [{secs:.1} s]"),
    }
    out.is_ok()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_fuzzy(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let hw = h * w;
    let mut t = Tensor::zeros(&[1, c, h, w]);
    for p in 0..hw {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        for (k, v) in raw.iter().enumerate() {
            t.data_mut()[k * hw + p] = v / sum;
        }
    }
    t
}

fn norm(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Worst relative error between analytic and central-difference gradients
/// of `loss` w.r.t. every input and every parameter in `store`.
fn worst_gradient_error(
    store: &ParamStore,
    inputs: &[Tensor<f64>],
    loss: &dyn for<'g> Fn(&Binder<'g, f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> f64 {
    let g = Graph::<f64>::new();
    let b = Binder::new(&g, store, |_| true);
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let grads = g.backward(loss(&b, &vars));
    let params = b.gradients(&grads, |v| v);
    let eval = |s: &ParamStore, xs: &[Tensor<f64>]| {
        let g = Graph::<f64>::new();
        let b = Binder::frozen(&g, s);
        let vars: Vec<_> = xs.iter().map(|t| g.constant(t.clone())).collect();
        loss(&b, &vars).item()
    };
    let mut worst = 0.0f64;
    let mut compare = |analytic: &Tensor<f64>, fd: &Tensor<f64>| {
        // paths into instance normalization can have identically zero gradients
        if norm(analytic).max(norm(fd)) >= 1e-7 {
            worst = worst.max(relative_error(analytic, fd));
        }
    };
    for (k, x0) in inputs.iter().enumerate() {
        let fd = finite_difference(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[k] = probe.clone();
                eval(store, &xs)
            },
            x0,
            1e-6,
        );
        compare(&grads.get_or_zeros(vars[k]), &fd);
    }
    for (name, analytic) in &params {
        let p0 = store.get(name).expect("bound parameter").clone();
        let fd = finite_difference(
            |p| {
                let mut s = store.clone();
                *s.get_mut(name).unwrap() = p.clone();
                eval(&s, inputs)
            },
            &p0,
            1e-6,
        );
        compare(analytic, &fd);
    }
    worst
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for resample in [Resample::None, Resample::Down, Resample::Up] {
        for norm_kind in [NormKind::None, NormKind::Instance, NormKind::RegionAdaptive] {
            for out_channels in [2, 3] {
                let cfg = MsBlockConfig {
                    in_channels: 2,
                    out_channels,
                    resample,
                    norm: norm_kind,
                };
                let block = MsBlock::new("blk", cfg, 3, 4);
                let mut store = ParamStore::new();
                block.declare(&mut store, &mut rng);
                let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
                for n in names {
                    if n.ends_with(".b") || n.contains("bg_") {
                        let shape = store.get(&n).unwrap().shape().to_vec();
                        *store.get_mut(&n).unwrap() = random(&shape, &mut rng).map(|v| 0.3 * v);
                    }
                }
                let side = match resample {
                    Resample::None => 4,
                    Resample::Down => 2,
                    Resample::Up => 8,
                };
                let probe = random(&[1, out_channels, side, side], &mut rng);
                let inputs = [
                    random(&[1, 2, 4, 4], &mut rng),
                    random_fuzzy(3, 4, 4, &mut rng),
                    random(&[1, 3, 2], &mut rng),
                ];
                let e = worst_gradient_error(&store, &inputs, &|b, v| {
                    let ctx = RegionContext::new(v[1], v[2]).unwrap();
                    let y = block.forward(b, v[0], Some(&ctx)).unwrap();
                    y.mul(b.graph().constant(probe.clone())).sum()
                });
                worst.push((format!("MS-block {resample:?}/{norm_kind:?}/{out_channels}"), e));
            }
        }
    }
    for (prefix, cin) in [("mask discriminator", 6), ("image discriminator", 3)] {
        let d = Discriminator::new("d", cin, 2, 2);
        let mut store = ParamStore::new();
        d.declare(&mut store, &mut rng);
        let x = random(&[1, cin, 4, 4], &mut rng);
        worst.push((prefix.into(), worst_gradient_error(&store, &[x], &|b, v| d.forward(b, v[0]).unwrap().tanh().sum())));
    }

    let empty = ParamStore::new();
    let logits: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 1, 2, 2], &mut rng).map(|v| 1.5 * v)).collect();
    let mut loss = |name: &str, xs: &[Tensor<f64>], f: &dyn for<'g> Fn(&[Var<'g, f64>]) -> Var<'g, f64>| {
        worst.push((name.into(), worst_gradient_error(&empty, xs, &|_, v| f(v))));
    };
    loss("structure adversarial (D)", &logits[..3], &|v| structure_adversarial_loss(v[0], v[1], Some(v[2]), 0.3).0);
    loss("structure adversarial (G)", &logits[..2], &|v| structure_adversarial_loss(v[0], v[0], Some(v[1]), 0.3).1);
    loss("image adversarial (D)", &logits, &|v| image_adversarial_loss(v[0], v[1], v[2], Some(v[3]), 0.4, 0.7).0);
    loss("image adversarial (G)", &logits[..3], &|v| image_adversarial_loss(v[0], v[0], v[1], Some(v[2]), 0.4, 0.7).1);
    let maps: Vec<Tensor<f64>> = (0..3).map(|_| random(&[2, 3, 4, 4], &mut rng)).collect();
    loss("structure reconstruction", &maps[..2], &|v| structure_recon_loss(v[0], v[1]).unwrap());
    loss("image reconstruction", &maps, &|v| image_recon_loss(v[0], v[1], v[2]).unwrap());
    let codes: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 4, 3], &mut rng)).collect();
    loss("style", &codes, &|v| style_loss(v[0], v[1], Some((v[2], v[3]))).unwrap());

    for (cin, depth) in [(3usize, 1usize), (6, 2)] {
        let disc = Discriminator::new("d", cin, 2, depth);
        let mut store = ParamStore::new();
        disc.declare(&mut store, &mut rng);
        let real = random(&[2, cin, 4, 4], &mut rng);
        let r = r1_penalty_with_grads(&disc, &store, &real, 1.7).unwrap();
        let mut e = 0.0f64;
        for (name, analytic) in &r.grads {
            let fd = finite_difference(
                |p| {
                    let mut s = store.clone();
                    *s.get_mut(name).unwrap() = p.clone();
                    r1_penalty(&disc, &s, &real, 1.7).unwrap()
                },
                store.get(name).unwrap(),
                1e-6,
            );
            if norm(analytic).max(norm(&fd)) >= 1e-9 {
                e = e.max(relative_error(analytic, &fd));
            }
        }
        worst.push((format!("R1 (depth {depth})"), e));
    }

    let elapsed = start.elapsed();
    let (name, max) = worst
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let detail = format!(
        "{} cases, max rel err {max:.2e} at {name} (need ≤ {GRAD_REL_TOL:.0e}); {:.0} s (need < {} s)",
        worst.len(),
        elapsed.as_secs_f64(),
        GRAD_BUDGET.as_secs()
    );
    ensure(max <= GRAD_REL_TOL && worst.iter().all(|w| w.1.is_finite()) && elapsed < GRAD_BUDGET, detail)
}

/// `D(x) = Σ ⟨w, x_b⟩`.
struct LinearCritic;

impl Critic for LinearCritic {
    fn prefix(&self) -> &str {
        "lin"
    }

    fn critic<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> regionmix::Result<Var<'g, T>> {
        let s = x.shape();
        Ok(x.mul(b.param("lin.w")).sum_to(&[s[0], 1, 1, 1]))
    }
}

fn s_adv<'g>(v: &[Var<'g, f64>], alpha: f64) -> (Var<'g, f64>, Var<'g, f64>) {
    structure_adversarial_loss(v[0], v[1], Some(v[2]), alpha)
}

fn i_adv<'g>(v: &[Var<'g, f64>], beta: f64, eta: f64) -> (Var<'g, f64>, Var<'g, f64>) {
    image_adversarial_loss(v[0], v[1], v[2], Some(v[3]), beta, eta)
}

fn loss_oracles() -> Outcome {
    let half = 0.5f64.ln();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for alpha in [0.0, 0.25, 0.5, 1.0] {
        let g = Graph::<f64>::new();
        let z = || g.constant(Tensor::zeros(&[2, 1, 2, 2]));
        let (d, gen) = structure_adversarial_loss(z(), z(), Some(z()), alpha);
        // -[log D(real) + α log(1 - D(known)) + (1 - α) log(1 - D(random))]
        let want_d = -(half + alpha * half + (1.0 - alpha) * half);
        let want_g = -(alpha * half + (1.0 - alpha) * half);
        worst = worst.max((d.item() - want_d).abs()).max((gen.item() - want_g).abs());
    }
    for (beta, eta) in [(0.5, 2.0 / 3.0), (0.2, 0.9), (1.0, 0.5), (0.0, 0.0)] {
        let g = Graph::<f64>::new();
        let z = || g.constant(Tensor::zeros(&[2, 1, 2, 2]));
        let (d, _) = image_adversarial_loss(z(), z(), z(), Some(z()), beta, eta);
        let objective = beta * half + (1.0 - beta) * (eta * 2.0 * half + (1.0 - eta) * half);
        worst = worst.max((d.item() + objective).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random(&[1, 3, 4, 4], &mut rng);
    let mut store = ParamStore::new();
    store.insert("lin.w", w.clone());
    let real = random(&[5, 3, 4, 4], &mut rng);
    let wn2: f64 = w.data().iter().map(|v| v * v).sum();
    for gamma in [1.0, 0.3, 10.0] {
        let r = r1_penalty(&LinearCritic, &store, &real, gamma).unwrap();
        worst = worst.max((r - 0.5 * gamma * wn2).abs());
    }
    if worst > LOSS_ORACLE_TOL {
        failures.push(format!("oracle error {worst:.2e}"));
    }

    // boundary weights zero exactly the matching gradients
    let inputs: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 1, 2, 2], &mut rng)).collect();
    let grads = |f: &dyn for<'g> Fn(&[Var<'g, f64>]) -> (Var<'g, f64>, Var<'g, f64>), gen: bool| {
        let g = Graph::<f64>::new();
        let v: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let (d, gl) = f(&v);
        let gr = g.backward(if gen { gl } else { d });
        v.iter().map(|&x| gr.get_or_zeros(x)).collect::<Vec<_>>()
    };
    let zero = |t: &Tensor<f64>| t.data().iter().all(|&v| v == 0.0);
    let mut boundary = |label: &str, ok: bool| {
        if !ok {
            failures.push(format!("{label} gradient not exactly zero"));
        }
    };
    boundary("α=1 random (D)", zero(&grads(&|v| s_adv(v, 1.0), false)[2]));
    boundary("α=1 random (G)", zero(&grads(&|v| s_adv(v, 1.0), true)[2]));
    boundary("α=0 known (D)", zero(&grads(&|v| s_adv(v, 0.0), false)[1]));
    boundary("α=0 known (G)", zero(&grads(&|v| s_adv(v, 0.0), true)[1]));
    boundary("β=1 fake (D)", grads(&|v| i_adv(v, 1.0, 0.5), false)[1..].iter().all(zero));
    boundary("β=1 (G)", grads(&|v| i_adv(v, 1.0, 0.5), true).iter().all(zero));
    boundary("β=0 real (D)", zero(&grads(&|v| i_adv(v, 0.0, 0.5), false)[0]));
    boundary("η=1 random (D)", zero(&grads(&|v| i_adv(v, 0.5, 1.0), false)[3]));
    boundary("η=1 random (G)", zero(&grads(&|v| i_adv(v, 0.5, 1.0), true)[3]));
    let e0d = grads(&|v| i_adv(v, 0.5, 0.0), false);
    let e0g = grads(&|v| i_adv(v, 0.5, 0.0), true);
    boundary("η=0 known/approx (D)", zero(&e0d[1]) && zero(&e0d[2]));
    boundary("η=0 known/approx (G)", zero(&e0g[1]) && zero(&e0g[2]));
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("max oracle error {worst:.1e} (need ≤ {LOSS_ORACLE_TOL:.0e}); 11 boundary cases exact")
        } else {
            failures.join("; ")
        },
    )
}

fn tiny_net(regions: usize, resolution: usize) -> NetConfig {
    NetConfig {
        regions,
        resolution,
        style_dim: 4,
        code_channels: 4,
        code_size: 4,
        encoder_width: 2,
        decoder_width: 4,
        style_width: 2,
        modulation_hidden: 4,
        generator_width: 4,
        generator_base: 4,
        disc_width: 2,
        disc_depth: 2,
    }
}

fn banded_mask(tax: &RegionTaxonomy, side: usize, p: f64, id: &str, rng: &mut ChaCha8Rng) -> SemanticMask {
    let bg = tax.background_index() as u8;
    let present: Vec<bool> = (0..tax.len()).map(|_| rng.gen_bool(p)).collect();
    let labels = (0..side * side)
        .map(|k| {
            let i = ((k / side) * tax.len() / side + k % side) % tax.len();
            if present[i] {
                i as u8
            } else {
                bg
            }
        })
        .collect();
    SemanticMask::new(side, side, labels, id).unwrap()
}

/// Region uniqueness and symmetry coherence of a drawn spec, checked
/// without the library's own validator.
fn spec_violation(spec: &CompositionSpec, masks: &[SemanticMask], tax: &RegionTaxonomy) -> Option<String> {
    if spec.assignments.len() != tax.len() {
        return Some("region count".into());
    }
    let has = |m: &SemanticMask, i: usize| m.labels().contains(&(i as u8));
    for (i, a) in spec.assignments.iter().enumerate() {
        if let Some(s) = a {
            let owners: Vec<_> = masks.iter().filter(|m| m.source_id() == s).collect();
            if owners.len() != 1 || !has(owners[0], i) {
                return Some(format!("region {i} not drawn from exactly one source containing it"));
            }
        } else if tax.group_of(i).is_none() && masks.iter().any(|m| has(m, i)) {
            return Some(format!("region {i} available but unassigned"));
        }
    }
    for g in tax.symmetry_groups() {
        let srcs: Vec<&SourceId> = g.iter().filter_map(|&i| spec.assignments[i].as_ref()).collect();
        if srcs.windows(2).any(|w| w[0] != w[1]) {
            return Some(format!("group {g:?} mixes sources"));
        }
        if srcs.is_empty() && g.iter().any(|&i| masks.iter().any(|m| has(m, i))) {
            return Some(format!("group {g:?} available but unassigned"));
        }
    }
    None
}

fn composition_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut violations = Vec::new();
    let mut draws = 0;
    for tax in [RegionTaxonomy::toy(), RegionTaxonomy::face(), RegionTaxonomy::building()] {
        for _ in 0..SAMPLER_DRAWS {
            let omega = rng.gen_range(1..=8);
            let p = rng.gen_range(0.2..1.0);
            let masks: Vec<_> = (0..omega).map(|k| banded_mask(&tax, 16, p, &format!("m{k}"), &mut rng)).collect();
            let spec = sample_random_spec(&masks, &tax, &mut rng).unwrap();
            draws += 1;
            if let Some(v) = spec_violation(&spec, &masks, &tax) {
                violations.push(v);
            }
        }
    }
    let toy = RegionTaxonomy::toy();
    let mut round_trip_failures = 0;
    for k in 0..100 {
        let m = toy_sample(32, 11, k).unwrap().mask;
        let out = assemble_copy_paste(&make_known_spec(&m, &toy), std::slice::from_ref(&m), &toy).unwrap();
        round_trip_failures += usize::from(out.labels() != m.labels());
    }
    let mut worst_sum = 0.0f32;
    let mut outputs = 0;
    for seed in 0..3 {
        let bundle = NetworkBundle::new(toy.clone(), tiny_net(5, 16), seed).unwrap();
        let masks: Vec<_> = (0..8).map(|k| toy_sample(16, seed, k).unwrap().mask).collect();
        let refs: Vec<&SemanticMask> = masks.iter().collect();
        for k in 0..20 {
            let spec = if k % 4 == 0 {
                make_known_spec(&masks[k % 8], &toy)
            } else {
                sample_random_spec(&masks, &toy, &mut rng).unwrap()
            };
            let used: Vec<&SemanticMask> = if spec.kind == CompositionKind::Known { vec![refs[k % 8]] } else { refs.clone() };
            worst_sum = worst_sum.max(bundle.structure_generate(&spec, &used).unwrap().max_sum_error());
            outputs += 1;
        }
    }
    let detail = format!(
        "{draws} draws, {} violations; {round_trip_failures}/100 copy-paste round-trip failures; \
         {outputs} decoder outputs, max |Σp - 1| = {worst_sum:.1e} (need ≤ {FUZZY_SUM_TOL:.0e})",
        violations.len()
    );
    ensure(violations.is_empty() && round_trip_failures == 0 && worst_sum <= FUZZY_SUM_TOL, detail)
}

/// Probs of the composition for `spec` before and after the absent region
/// `absent` is scribbled into every source.
fn zero_code_case(bundle: &NetworkBundle, masks: &[SemanticMask], absent: usize, rng: &mut ChaCha8Rng) -> bool {
    let tax = &bundle.taxonomy;
    let mut spec = CompositionSpec::absent(tax, CompositionKind::Random);
    for i in 0..tax.len() {
        let in_group = tax.group_of(i).is_some_and(|g| g.contains(&absent));
        if i != absent && !in_group {
            let key = tax.group_of(i).map_or(i, |g| g[0]);
            spec.assignments[i] = Some(masks[key % masks.len()].source_id().clone());
        }
    }
    let refs: Vec<&SemanticMask> = masks.iter().collect();
    let base = bundle.structure_generate(&spec, &refs).unwrap();
    let bg = tax.background_index() as u8;
    (0..3).all(|_| {
        let perturbed: Vec<SemanticMask> = masks
            .iter()
            .map(|m| {
                let mut labels = m.labels().to_vec();
                for _ in 0..labels.len() / 4 {
                    let p = rng.gen_range(0..labels.len());
                    if labels[p] == bg {
                        labels[p] = absent as u8;
                    } else if labels[p] == absent as u8 {
                        labels[p] = bg;
                    }
                }
                SemanticMask::new(m.height(), m.width(), labels, m.source_id().clone()).unwrap()
            })
            .collect();
        let refs: Vec<&SemanticMask> = perturbed.iter().collect();
        bundle.structure_generate(&spec, &refs).unwrap().probs() == base.probs()
    })
}

fn zero_code(trained: Option<&NetworkBundle>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let toy = RegionTaxonomy::toy();
    let mut bundles = vec![("untrained", NetworkBundle::new(toy.clone(), tiny_net(5, 32), 3).unwrap())];
    if let Some(b) = trained {
        bundles.push(("trained", b.clone()));
    }
    let mut cases = 0;
    let mut leaks = Vec::new();
    for (label, bundle) in &bundles {
        let res = bundle.config().resolution;
        let masks: Vec<_> = (0..2).map(|k| toy_sample(res, 5, k).unwrap().mask).collect();
        for absent in 0..toy.len() {
            cases += 1;
            if !zero_code_case(bundle, &masks, absent, &mut rng) {
                leaks.push(format!("{label} region {absent}"));
            }
        }
    }
    ensure(
        leaks.is_empty(),
        format!("{cases} absent-region cases, bitwise invariant; leaks: {leaks:?}"),
    )
}

fn ssim_reference(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let n = {
        let n = 11.min(h).min(w);
        if n % 2 == 0 {
            n - 1
        } else {
            n
        }
    };
    let half = (n / 2) as f64;
    let mut wts: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64 - half, (k % n) as f64 - half);
            (-(i * i + j * j) / (2.0 * 1.5 * 1.5)).exp()
        })
        .collect();
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut acc, mut count) = (0.0, 0.0);
    for ch in 0..c {
        for y in 0..=h - n {
            for x in 0..=w - n {
                let at = |img: &[f64], k: usize| img[(ch * h + y + k / n) * w + x + k % n];
                let ma: f64 = (0..n * n).map(|k| wts[k] * at(a, k)).sum();
                let mb: f64 = (0..n * n).map(|k| wts[k] * at(b, k)).sum();
                let va: f64 = (0..n * n).map(|k| wts[k] * (at(a, k) - ma).powi(2)).sum();
                let vb: f64 = (0..n * n).map(|k| wts[k] * (at(b, k) - mb).powi(2)).sum();
                let cov: f64 = (0..n * n).map(|k| wts[k] * (at(a, k) - ma) * (at(b, k) - mb)).sum();
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    acc / count
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut ssim_err = 0.0f64;
    for (c, h, w) in [(1, 16, 16), (3, 16, 16), (3, 20, 13), (2, 7, 9), (3, 32, 32)] {
        let a: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| 0.7 * v + 0.3 * rng.gen_range(0.0..1.0)).collect();
        let planes = Planes {
            channels: c,
            height: h,
            width: w,
        };
        ssim_err = ssim_err.max((ssim(&a, &b, planes, 1.0).unwrap() - ssim_reference(&a, &b, c, h, w)).abs());
    }
    // offset by 1/8 (exact in binary): RMSE 1/8, PSNR 20 log10(8)
    let planes = Planes {
        channels: 3,
        height: 8,
        width: 8,
    };
    let a: Vec<f64> = (0..192).map(|k| (k % 7) as f64 / 8.0).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.125).collect();
    let r = rmse(&a, &b, planes).unwrap();
    let p = psnr(&a, &b, planes, 1.0).unwrap();
    let want_psnr = 20.0 * 8f64.log10();
    let closed = r == 0.125
        && matches!(p, Score::Value(v) if (v - want_psnr).abs() <= 1e-12)
        && psnr(&a, &a, planes, 1.0).unwrap().is_inf()
        && rmse(&a, &a, planes).unwrap() == 0.0;
    let normal = |m| Normal::new(m, 1.0).unwrap();
    let xs: Vec<Vec<f64>> = (0..FRECHET_N).map(|_| vec![normal(0.0).sample(&mut rng)]).collect();
    let ys: Vec<Vec<f64>> = (0..FRECHET_N).map(|_| vec![normal(3.0).sample(&mut rng)]).collect();
    let fd = frechet_distance(&xs, &ys).unwrap().distance;
    let elapsed = start.elapsed();
    ensure(
        ssim_err <= SSIM_REF_TOL && closed && (fd - 9.0).abs() <= FRECHET_TOL && elapsed < METRIC_BUDGET,
        format!(
            "SSIM vs reference {ssim_err:.1e} (need ≤ {SSIM_REF_TOL:.0e}); RMSE/PSNR closed forms {}; \
             Fréchet N(0,1)/N(3,1) = {fd:.3} (need 9 ± {FRECHET_TOL}); {:.1} s (need < {} s)",
            if closed { "exact" } else { "MISMATCH" },
            elapsed.as_secs_f64(),
            METRIC_BUDGET.as_secs()
        ),
    )
}

#[derive(Debug, Deserialize)]
struct RunRecord {
    samples: usize,
    test: usize,
    resolution: usize,
    seed: u64,
    batch_size: usize,
    steps: u64,
    train_wall_secs: f64,
}

struct ToyRun {
    dir: PathBuf,
    record: RunRecord,
    bundle: NetworkBundle,
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn load_toy_run() -> Result<ToyRun, String> {
    let dir = std::env::var_os("REGIONMIX_TOY_RUN")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("runs/toy"));
    let text = std::fs::read_to_string(dir.join("run.json")).map_err(|e| format!("{}: {e}", dir.join("run.json").display()))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| format!("run.json: {e}"))?;
    let bundle = NetworkBundle::load(&dir.join("model.rmx")).map_err(|e| e.to_string())?;
    Ok(ToyRun { dir, record, bundle })
}

fn toy_budget(run: &ToyRun) -> Outcome {
    let r = &run.record;
    let train = r.samples - r.test;
    let hours = r.train_wall_secs / 3600.0;
    ensure(
        run.bundle.step == r.steps
            && r.steps <= TOY_MAX_STEPS
            && hours <= TOY_MAX_HOURS
            && train == TOY_TRAIN_SAMPLES
            && r.test == TOY_TEST_SAMPLES
            && r.resolution == TOY_RESOLUTION
            && run.bundle.config().resolution == TOY_RESOLUTION
            && r.batch_size == TOY_OMEGA,
        format!(
            "{} steps (max {TOY_MAX_STEPS}), {hours:.2} h training (max {TOY_MAX_HOURS}), {train} train / {} test at {}², ω = {}",
            r.steps, r.test, r.resolution, r.batch_size
        ),
    )
}

fn two_process_determinism(checkpoint: &Path, data: &Path, sources: &[String]) -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let specs = [
        ("known", serde_json::json!({"assignments": {"face": sources[0], "eye_l": sources[0], "mouth": sources[0], "hair": sources[0]}})),
        ("random", serde_json::json!({"assignments": {"face": sources[1], "eye_l": sources[2], "mouth": sources[3], "hair": sources[0]}})),
    ];
    let mut compared = 0;
    for (name, spec) in &specs {
        let spec_path = dir.path().join(format!("{name}.json"));
        std::fs::write(&spec_path, spec.to_string()).unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_regionmix"))
                .args(["synthesize", "--checkpoint"])
                .arg(checkpoint)
                .arg("--data")
                .arg(data)
                .arg("--spec")
                .arg(&spec_path)
                .arg("--out")
                .arg(&out)
                .env("RUST_LOG", "warn")
                .output()
                .unwrap();
            if !status.status.success() {
                return Err(format!("synthesize failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            outputs.push(out);
        }
        for file in ["image.png", "mask.png", "fuzzy.json"] {
            let a = std::fs::read(outputs[0].join(file)).unwrap();
            let b = std::fs::read(outputs[1].join(file)).unwrap();
            if a != b {
                return Err(format!("{name}: {file} differs between processes"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across 2 processes ({})", checkpoint.display()))
}

fn no_secondary_component() -> Outcome {
    let root = workspace_root();
    let mut found = Vec::new();
    let mut crates = Vec::new();
    for e in std::fs::read_dir(root.join("crates")).unwrap() {
        let p = e.unwrap().path();
        crates.push(p.file_name().unwrap().to_string_lossy().into_owned());
        for marker in ["package.json", "tsconfig.json", "node_modules", "build.rs"] {
            if p.join(marker).exists() {
                found.push(p.join(marker).display().to_string());
            }
        }
    }
    for marker in ["package.json", "node_modules"] {
        if root.join(marker).exists() {
            found.push(marker.to_string());
        }
    }
    crates.sort();
    ensure(
        found.is_empty(),
        format!("workspace builds only {crates:?}; no UI package or build script {found:?}"),
    )
}

fn main() {
    // `cargo test` passes harness flags; a filter that excludes us skips the run
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    // failures are reported on their line; keep panic output off the console
    std::panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run_check("gradient suite", gradient_suite);
    ok &= run_check("loss oracles", loss_oracles);
    ok &= run_check("composition invariants", composition_invariants);
    ok &= run_check("metric oracles", metric_oracles);

    let run = load_toy_run();
    ok &= run_check("zero-code property", || zero_code(run.as_ref().ok().map(|r| &r.bundle)));
    match &run {
        Err(e) => {
            for name in ["toy run budget", "toy (a) known SSIM/PSNR", "toy (b) known region IoU", "toy (c) random validity/IoU", "toy (d) style preservation", "inference determinism"] {
                ok &= run_check(name, || Err(format!("no trained toy run: {e}")));
            }
        }
        Ok(run) => {
            ok &= run_check("toy run budget", || toy_budget(run));
            let data_dir = tempfile::TempDir::new().unwrap();
            let r = &run.record;
            let data = generate_toy_dataset(data_dir.path(), r.samples, r.resolution, r.seed, r.test)
                .and_then(Dataset::open)
                .unwrap();
            let test = data.split_indices(Split::Test);
            let known = evaluate_known(&run.bundle, &data, &test, None);
            let random = evaluate_random(&run.bundle, &data, &test, TOY_OMEGA, RANDOM_BATCHES, RANDOM_SEED);
            ok &= run_check("toy (a) known SSIM/PSNR", || {
                let k = known.as_ref().map_err(|e| e.to_string())?;
                let m = &k.report.aggregate.metrics;
                let (s, p) = (m["ssim"].value().unwrap_or(f64::NAN), m["psnr"].value().unwrap_or(f64::INFINITY));
                ensure(
                    s >= KNOWN_SSIM_MIN && p >= KNOWN_PSNR_MIN,
                    format!(
                        "SSIM {s:.3} (need ≥ {KNOWN_SSIM_MIN}), PSNR {p:.2} dB (need ≥ {KNOWN_PSNR_MIN}) over {} held-out samples",
                        k.report.rows.len()
                    ),
                )
            });
            ok &= run_check("toy (b) known region IoU", || {
                let k = known.as_ref().map_err(|e| e.to_string())?;
                ensure(
                    k.mean_region_iou >= KNOWN_IOU_MIN,
                    format!("mean IoU {:.3} (need ≥ {KNOWN_IOU_MIN}) over {} regions", k.mean_region_iou, k.region_count),
                )
            });
            ok &= run_check("toy (c) random validity/IoU", || {
                let e = random.as_ref().map_err(|e| e.to_string())?;
                ensure(
                    e.valid == e.results && e.iou_at_least_0_3 >= RANDOM_IOU_SHARE,
                    format!(
                        "{}/{} valid fuzzy masks; {:.1}% of {} regions at IoU ≥ {RANDOM_IOU_MIN} (need {:.0}%); mean {:.3}, min {:.3}",
                        e.valid,
                        e.results,
                        100.0 * e.iou_at_least_0_3,
                        e.regions,
                        100.0 * RANDOM_IOU_SHARE,
                        e.iou_mean,
                        e.iou_min
                    ),
                )
            });
            ok &= run_check("toy (d) style preservation", || {
                let e = random.as_ref().map_err(|e| e.to_string())?;
                ensure(
                    e.style_fraction >= STYLE_SHARE_MIN,
                    format!(
                        "{:.1}% of {} regions closest to their source (need ≥ {:.0}%)",
                        100.0 * e.style_fraction,
                        e.style_regions,
                        100.0 * STYLE_SHARE_MIN
                    ),
                )
            });
            let sources: Vec<String> = test.iter().take(4).map(|&k| data.samples[k].id.0.clone()).collect();
            ok &= run_check("inference determinism", || {
                two_process_determinism(&run.dir.join("model.rmx"), data_dir.path(), &sources)
            });
        }
    }
    ok &= run_check("no secondary component built", no_secondary_component);
    if !ok {
        std::process::exit(1);
    }
}
