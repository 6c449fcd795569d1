//! One joint update: mask discriminator, image discriminator, then every
//! generator-side network through a single backward pass.

use std::collections::BTreeMap;
use std::time::Instant;

use regionmix_autograd::{concat, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::losses::{
    ensure_finite, image_d_loss, image_g_loss, image_recon_loss, structure_d_loss, structure_g_loss,
    structure_recon_loss, style_loss,
};
use super::optim::{AdamState, AdamW};
use super::r1::r1_penalty_with_grads;
use crate::composition::FuzzyComposition;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{images_tensor, one_hot_tensor, slices_tensor, Binder, NetworkBundle};
use crate::taxonomy::RegionTaxonomy;

/// Structure encoders, decoder, style encoders and image generator.
pub fn is_generator_param(name: &str) -> bool {
    name.starts_with("gm.") || name.starts_with("style.") || name.starts_with("gi.")
}

pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with("dm.") || name.starts_with("di.")
}

/// Scalars logged after every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub d_mask: f64,
    pub d_image: f64,
    pub r1_mask: f64,
    pub r1_image: f64,
    pub g_adv_mask: f64,
    pub g_adv_image: f64,
    pub rec_mask: f64,
    pub rec_image: f64,
    pub style: f64,
    pub g_total: f64,
    /// Fraction of real and fake samples each discriminator classifies
    /// correctly (sign of the mean patch logit).
    pub acc_mask: f64,
    pub acc_image: f64,
    pub random_skipped: bool,
    pub wall_ms: f64,
}

/// Network state plus both optimizers.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: NetworkBundle,
    pub config: TrainConfig,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
}

/// Per-region stacks of the non-empty slices of a set of masks, and where
/// each sample's slice sits in its stack.
struct RegionStacks {
    slices: Vec<Option<Tensor<f32>>>,
    rows: Vec<Vec<usize>>,
    /// `pos[s][i]`: row of sample `s` in stack `i`.
    pos: Vec<Vec<Option<usize>>>,
}

impl RegionStacks {
    fn build(masks: &[&crate::mask::SemanticMask], regions: usize) -> Self {
        let mut slices = Vec::with_capacity(regions);
        let mut rows = Vec::with_capacity(regions);
        let mut pos = vec![vec![None; regions]; masks.len()];
        for i in 0..regions {
            let present: Vec<usize> = (0..masks.len()).filter(|&s| masks[s].contains_region(i)).collect();
            for (r, &s) in present.iter().enumerate() {
                pos[s][i] = Some(r);
            }
            let sl: Vec<_> = present.iter().map(|&s| masks[s].region_slice(i)).collect();
            let refs: Vec<_> = sl.iter().collect();
            slices.push((!refs.is_empty()).then(|| slices_tensor::<f32>(&refs)));
            rows.push(present);
        }
        Self { slices, rows, pos }
    }
}

/// Share of samples on the correct side of zero: reals positive, fakes negative.
fn accuracy(logits: &Tensor<f32>, reals: usize) -> f64 {
    let n = logits.dim(0);
    let per = logits.numel() / n.max(1);
    let correct = (0..n)
        .filter(|&s| {
            let m: f64 = logits.data()[s * per..(s + 1) * per].iter().map(|&v| v as f64).sum::<f64>() / per as f64;
            if s < reals {
                m > 0.0
            } else {
                m < 0.0
            }
        })
        .count();
    correct as f64 / n.max(1) as f64
}

fn split<'g>(v: Var<'g, f32>, parts: usize) -> Vec<Var<'g, f32>> {
    let b = v.shape()[0] / parts;
    (0..parts).map(|k| v.narrow(0, k * b, b)).collect()
}

fn harden_all(fc: &Tensor<f32>) -> Result<Vec<crate::mask::SemanticMask>> {
    let (n, c, h, w) = (fc.dim(0), fc.dim(1), fc.dim(2), fc.dim(3));
    let per = c * h * w;
    (0..n)
        .map(|s| Ok(FuzzyComposition::new(c, h, w, fc.data()[s * per..(s + 1) * per].to_vec())?.harden(format!("regen{s}"))))
        .collect()
}

impl Trainer {
    pub fn new(taxonomy: RegionTaxonomy, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = NetworkBundle::new(taxonomy, config.net.clone(), config.seed)?;
        Ok(Self {
            bundle,
            config,
            opt_g: AdamState::default(),
            opt_d: AdamState::default(),
        })
    }

    fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
            weight_decay: self.config.weight_decay,
        }
    }

    /// Learning rate for the upcoming step, with optional linear decay.
    fn lr(&self, base: f64) -> f64 {
        if !self.config.lr_decay || self.config.max_steps == 0 {
            return base;
        }
        let done = self.bundle.step as f64 / self.config.max_steps as f64;
        base * (1.0 - done).max(0.0)
    }

    /// Optimizer moments as checkpoint extras.
    pub fn optimizer_arrays(&self) -> BTreeMap<String, Tensor<f64>> {
        let mut out = self.opt_g.to_arrays("opt_g");
        out.extend(self.opt_d.to_arrays("opt_d"));
        out
    }

    pub fn restore_optimizers(&mut self, extras: &BTreeMap<String, Tensor<f64>>) {
        self.opt_g = AdamState::from_arrays("opt_g", extras);
        self.opt_d = AdamState::from_arrays("opt_d", extras);
    }

    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let started = Instant::now();
        let step = self.bundle.step + 1;
        let w = self.config.weights.clone();
        let nets = &self.bundle.nets;
        let cfg = &nets.config;
        let (n, ch, res) = (cfg.regions, cfg.channels(), cfg.resolution);
        let bsz = batch.len();
        if bsz < 2 {
            return Err(Error::Argument(format!("batch of {bsz} samples; at least 2 required")));
        }
        for (m, im) in batch.masks.iter().zip(&batch.images) {
            if (m.height(), m.width(), im.height, im.width) != (res, res, res, res) {
                return Err(Error::Shape(format!("batch samples must be {res}x{res}")));
            }
            m.validate(&self.bundle.taxonomy)?;
        }
        let skip_random = batch.uniform;
        if skip_random {
            log::warn!("step {step}: batch has a single distinct source, random-composition terms skipped");
        }

        let masks: Vec<_> = batch.masks.iter().collect();
        let stacks = RegionStacks::build(&masks, n);
        let images_real = images_tensor::<f32>(&batch.images.iter().collect::<Vec<_>>());
        let onehot_real = one_hot_tensor::<f32>(&masks, ch);
        let known_picks = stacks.pos.clone();
        let random_picks: Vec<Vec<Option<usize>>> = batch
            .random_sources
            .iter()
            .map(|src| (0..n).map(|i| src[i].and_then(|s| stacks.pos[s][i])).collect())
            .collect();
        // style stacks pair each region's slices with the matching images
        let style_images: Vec<Option<Tensor<f32>>> = stacks
            .rows
            .iter()
            .map(|rows| {
                (!rows.is_empty()).then(|| images_tensor::<f32>(&rows.iter().map(|&s| &batch.images[s]).collect::<Vec<_>>()))
            })
            .collect();

        // generator forward
        let gg = Graph::<f32>::new();
        let bg = Binder::new(&gg, &self.bundle.params, is_generator_param);
        let codes = nets.encode_structure(&bg, &stacks.slices)?;
        let mut code_parts = vec![nets.composition_code(&bg, &codes, &known_picks)?];
        if !skip_random {
            code_parts.push(nets.composition_code(&bg, &codes, &random_picks)?);
        }
        let fc_all = nets.decoder.forward(&bg, concat(&code_parts, 0))?;
        let fc_known = fc_all.narrow(0, 0, bsz);
        let fc_rand = (!skip_random).then(|| fc_all.narrow(0, bsz, bsz));

        let style_in: Vec<_> = style_images
            .iter()
            .zip(&stacks.slices)
            .map(|(im, sl)| Some((gg.constant(im.clone()?), sl.clone()?)))
            .collect();
        let style_codes = nets.encode_style(&bg, &style_in)?;
        let delta_known = nets.style_matrix(&bg, &style_codes, &known_picks)?;
        let delta_rand = (!skip_random)
            .then(|| nets.style_matrix(&bg, &style_codes, &random_picks))
            .transpose()?;

        let onehot_v = gg.constant(onehot_real.clone());
        let mut fuzzy_parts = vec![onehot_v, fc_known];
        let mut style_parts = vec![delta_known, delta_known];
        if let (Some(f), Some(d)) = (fc_rand, delta_rand) {
            fuzzy_parts.push(f);
            style_parts.push(d);
        }
        let gen = nets.generator.forward(&bg, concat(&fuzzy_parts, 0), concat(&style_parts, 0))?;
        let gen_parts = split(gen, fuzzy_parts.len());
        let (img_known, img_approx) = (gen_parts[0], gen_parts[1]);
        let img_rand = gen_parts.get(2).copied();

        // discriminator update on detached fakes
        let mut d_store = self.bundle.params.subset(is_discriminator_param);
        let (d_mask, d_image, acc_mask, acc_image, mut d_grads) = {
            let gd = Graph::<f32>::new();
            let bd = Binder::new(&gd, &d_store, is_discriminator_param);
            let mut m_in = vec![gd.constant(onehot_real.clone()), gd.constant((*fc_known.value()).clone())];
            if let Some(f) = fc_rand {
                m_in.push(gd.constant((*f.value()).clone()));
            }
            let lm = nets.mask_disc.forward(&bd, concat(&m_in, 0))?;
            let lm_parts = split(lm, m_in.len());
            let dm = structure_d_loss(lm_parts[0], lm_parts[1], lm_parts.get(2).copied(), w.alpha);

            let mut i_in = vec![
                gd.constant(images_real.clone()),
                gd.constant((*img_known.value()).clone()),
                gd.constant((*img_approx.value()).clone()),
            ];
            if let Some(r) = img_rand {
                i_in.push(gd.constant((*r.value()).clone()));
            }
            let li = nets.image_disc.forward(&bd, concat(&i_in, 0))?;
            let li_parts = split(li, i_in.len());
            let di = image_d_loss(li_parts[0], li_parts[1], li_parts[2], li_parts.get(3).copied(), w.beta, w.eta);

            let dm_v = ensure_finite(dm.item() as f64, step, "mask discriminator loss")?;
            let di_v = ensure_finite(di.item() as f64, step, "image discriminator loss")?;
            let grads = gd.backward(dm.add(di));
            (
                dm_v,
                di_v,
                accuracy(&lm.value(), bsz),
                accuracy(&li.value(), bsz),
                bd.gradients(&grads, |x| x as f64),
            )
        };
        let (mut r1_mask, mut r1_image) = (0.0, 0.0);
        if w.r1_gamma > 0.0 && step % self.config.r1_interval == 0 {
            let k = self.config.r1_interval as f64;
            let rm = r1_penalty_with_grads(&nets.mask_disc, &d_store, &onehot_real, w.r1_gamma)?;
            let ri = r1_penalty_with_grads(&nets.image_disc, &d_store, &images_real, w.r1_gamma)?;
            r1_mask = ensure_finite(rm.value, step, "mask R1 penalty")?;
            r1_image = ensure_finite(ri.value, step, "image R1 penalty")?;
            for (name, g) in rm.grads.into_iter().chain(ri.grads) {
                let acc = d_grads.get_mut(&name).expect("R1 differentiates discriminator parameters");
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += k * b);
            }
        }
        let opt = self.adamw();
        let lr_d = self.lr(self.config.lr_d);
        let lr_g = self.lr(self.config.lr_g);
        if self.config.lr_d > 0.0 {
            self.opt_d.update(&opt, lr_d, &mut d_store, &d_grads)?;
            d_store.refresh_spectral(|_| true, self.config.spectral_iters);
        }

        // generator losses against the updated discriminators
        let bdg = Binder::frozen(&gg, &d_store);
        let mut fm = vec![fc_known];
        fm.extend(fc_rand);
        let lm = split(nets.mask_disc.forward(&bdg, concat(&fm, 0))?, fm.len());
        let g_mask = structure_g_loss(lm[0], lm.get(1).copied(), w.alpha);
        let mut fi = vec![img_known, img_approx];
        fi.extend(img_rand);
        let li = split(nets.image_disc.forward(&bdg, concat(&fi, 0))?, fi.len());
        let g_image = image_g_loss(li[0], li[1], li.get(2).copied(), w.beta, w.eta);
        let rec_mask = structure_recon_loss(onehot_v, fc_known)?;
        let rec_image = image_recon_loss(gg.constant(images_real.clone()), img_known, img_approx)?;

        // re-encode styles with the regions of the generated compositions
        let mut regen_fc = vec![fc_known];
        regen_fc.extend(fc_rand);
        let regen_fc = concat(&regen_fc, 0);
        let hard = harden_all(&regen_fc.value())?;
        let regen_stacks = RegionStacks::build(&hard.iter().collect::<Vec<_>>(), n);
        let mut regen_imgs = vec![img_approx];
        regen_imgs.extend(img_rand);
        let regen_imgs = concat(&regen_imgs, 0);
        let regen_in: Vec<_> = regen_stacks
            .rows
            .iter()
            .zip(&regen_stacks.slices)
            .map(|(rows, sl)| {
                let picks: Vec<Option<usize>> = rows.iter().map(|&s| Some(s)).collect();
                Some((regen_imgs.gather_rows(&picks), sl.clone()?))
            })
            .collect();
        let regen_codes = nets.encode_style(&bg, &regen_in)?;
        let regen_delta = nets.style_matrix(&bg, &regen_codes, &regen_stacks.pos)?;
        let style = style_loss(
            delta_known.detach(),
            regen_delta.narrow(0, 0, bsz),
            delta_rand.map(|d| (d.detach(), regen_delta.narrow(0, bsz, bsz))),
        )?;

        let g_total = g_mask
            .add(g_image)
            .scale(w.lambda_a)
            .add(rec_mask.add(rec_image).scale(w.lambda_r))
            .add(style.scale(w.lambda_s));
        let record = StepRecord {
            step,
            d_mask,
            d_image,
            r1_mask,
            r1_image,
            g_adv_mask: ensure_finite(g_mask.item() as f64, step, "mask generator loss")?,
            g_adv_image: ensure_finite(g_image.item() as f64, step, "image generator loss")?,
            rec_mask: ensure_finite(rec_mask.item() as f64, step, "structure reconstruction loss")?,
            rec_image: ensure_finite(rec_image.item() as f64, step, "image reconstruction loss")?,
            style: ensure_finite(style.item() as f64, step, "style loss")?,
            g_total: ensure_finite(g_total.item() as f64, step, "generator objective")?,
            acc_mask,
            acc_image,
            random_skipped: skip_random,
            wall_ms: 0.0,
        };
        let g_grads = bg.gradients(&gg.backward(g_total), |x| x as f64);
        if let Some((name, _)) = g_grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::TrainingFault {
                step,
                term: format!("gradient of `{name}`"),
            });
        }
        drop(bdg);
        drop(bg);
        drop(gg);

        if self.config.lr_g > 0.0 {
            self.opt_g.update(&opt, lr_g, &mut self.bundle.params, &g_grads)?;
            self.bundle
                .params
                .refresh_spectral(is_generator_param, self.config.spectral_iters);
        }
        self.bundle.params.absorb(d_store);
        self.bundle.step = step;
        Ok(StepRecord {
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            ..record
        })
    }
}
