//! The six networks: per-region structure encoders, the composition
//! decoder, per-region style encoders, the image generator and the two
//! patch discriminators.

use rand::Rng;
use regionmix_autograd::{concat, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::{declare_specs, Conv, ParamSpec, Linear, MsBlock, MsBlockConfig, NormKind, RegionContext, Resample, LEAK, NORM_EPS};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};

/// Architecture hyperparameters. Every width is configurable; the defaults
/// are sized for single-CPU training at 64×64.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub regions: usize,
    pub resolution: usize,
    /// δ, the style code length.
    pub style_dim: usize,
    /// Channels of one structure code.
    pub code_channels: usize,
    /// Spatial side of one structure code.
    pub code_size: usize,
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub style_width: usize,
    pub modulation_hidden: usize,
    pub generator_width: usize,
    /// Side of the first generator feature map.
    pub generator_base: usize,
    pub disc_width: usize,
    /// Number of downsampling blocks in each discriminator.
    pub disc_depth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            regions: 5,
            resolution: 64,
            style_dim: 128,
            code_channels: 128,
            code_size: 16,
            encoder_width: 8,
            decoder_width: 64,
            style_width: 32,
            modulation_hidden: 64,
            generator_width: 64,
            generator_base: 8,
            disc_width: 16,
            disc_depth: 4,
        }
    }
}

pub const MAX_WIDTH: usize = 4096;
pub const MAX_RESOLUTION: usize = 4096;

fn log2_ratio(big: usize, small: usize, what: &str) -> Result<usize> {
    if small == 0 || big < small || big % small != 0 || !(big / small).is_power_of_two() {
        return Err(Error::Config(format!(
            "{what}: {big} is not a power-of-two multiple of {small}"
        )));
    }
    Ok((big / small).trailing_zeros() as usize)
}

impl NetConfig {
    pub fn with_regions(regions: usize) -> Self {
        Self {
            regions,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("regions", self.regions),
            ("style_dim", self.style_dim),
            ("code_channels", self.code_channels),
            ("encoder_width", self.encoder_width),
            ("decoder_width", self.decoder_width),
            ("style_width", self.style_width),
            ("modulation_hidden", self.modulation_hidden),
            ("generator_width", self.generator_width),
            ("disc_width", self.disc_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v > MAX_WIDTH) {
            return Err(Error::Config(format!("`{name}` exceeds {MAX_WIDTH}")));
        }
        if self.resolution < 2 || self.resolution > MAX_RESOLUTION {
            return Err(Error::Config(format!(
                "resolution must be in 2..={MAX_RESOLUTION}"
            )));
        }
        if self.disc_depth > 16 {
            return Err(Error::Config("disc_depth must be at most 16".into()));
        }
        log2_ratio(self.resolution, self.code_size, "resolution vs code_size")?;
        log2_ratio(self.resolution, self.generator_base, "resolution vs generator_base")?;
        if self.disc_depth == 0 || self.resolution % (1 << self.disc_depth) != 0 {
            return Err(Error::Config(format!(
                "resolution {} not divisible by 2^disc_depth ({})",
                self.resolution, self.disc_depth
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.regions + 1
    }
}

/// Region slice → `code_channels × code_size²` structure code.
#[derive(Clone, Debug)]
pub struct StructureEncoder {
    pub region: usize,
    stem: Conv,
    blocks: Vec<MsBlock>,
    out: Conv,
}

impl StructureEncoder {
    fn new(cfg: &NetConfig, region: usize) -> Self {
        let p = format!("gm.enc{region}");
        let downs = log2_ratio(cfg.resolution, cfg.code_size, "").unwrap_or(0);
        let mut width = cfg.encoder_width;
        let stem = Conv::new(format!("{p}.stem"), 1, width, 3);
        let mut blocks = Vec::new();
        for i in 0..downs.max(1) {
            let next = if downs == 0 { width } else { width * 2 };
            blocks.push(MsBlock::plain(
                &format!("{p}.block{i}"),
                MsBlockConfig {
                    in_channels: width,
                    out_channels: next,
                    resample: if downs == 0 { Resample::None } else { Resample::Down },
                    norm: NormKind::Instance,
                },
            ));
            width = next;
        }
        Self {
            region,
            stem,
            blocks,
            out: Conv::new(format!("{p}.out"), width, cfg.code_channels, 1),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.stem.specs(out);
        self.blocks.iter().for_each(|b| b.specs(out));
        self.out.specs(out);
    }

    /// `slices` is `[n, 1, H, W]` of non-empty region slices.
    pub fn forward<'g, T: Scalar>(&self, b: &Binder<'g, T>, slices: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = self.stem.forward(b, slices);
        for blk in &self.blocks {
            h = blk.forward(b, h, None)?;
        }
        Ok(self.out.forward(b, h.instance_norm(NORM_EPS).leaky_relu(LEAK)))
    }
}

/// Composition code → fuzzy composition (softmax over `N + 1` channels).
#[derive(Clone, Debug)]
pub struct StructureDecoder {
    input: Conv,
    blocks: Vec<MsBlock>,
    head: Conv,
}

impl StructureDecoder {
    fn new(cfg: &NetConfig) -> Self {
        let ups = log2_ratio(cfg.resolution, cfg.code_size, "").unwrap_or(0);
        let mut width = cfg.decoder_width;
        let mut blocks = vec![MsBlock::plain(
            "gm.dec.block0",
            MsBlockConfig {
                in_channels: width,
                out_channels: width,
                resample: Resample::None,
                norm: NormKind::Instance,
            },
        )];
        for i in 0..ups {
            let next = (width / 2).max(8);
            blocks.push(MsBlock::plain(
                &format!("gm.dec.block{}", i + 1),
                MsBlockConfig {
                    in_channels: width,
                    out_channels: next,
                    resample: Resample::Up,
                    norm: NormKind::Instance,
                },
            ));
            width = next;
        }
        Self {
            input: Conv::new("gm.dec.in", cfg.regions * cfg.code_channels, cfg.decoder_width, 1),
            blocks,
            head: Conv::new("gm.dec.head", width, cfg.channels(), 3),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.input.specs(out);
        self.blocks.iter().for_each(|b| b.specs(out));
        self.head.specs(out);
    }

    pub fn forward<'g, T: Scalar>(&self, b: &Binder<'g, T>, code: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = self.input.forward(b, code);
        for blk in &self.blocks {
            h = blk.forward(b, h, None)?;
        }
        let logits = self.head.forward(b, h.instance_norm(NORM_EPS).leaky_relu(LEAK));
        Ok(logits.softmax_channels())
    }
}

/// Image segment → δ-length style code via masked average pooling.
#[derive(Clone, Debug)]
pub struct StyleEncoder {
    pub region: usize,
    conv1: Conv,
    conv2: Conv,
    proj: Linear,
}

impl StyleEncoder {
    fn new(cfg: &NetConfig, region: usize) -> Self {
        let p = format!("style.enc{region}");
        Self {
            region,
            conv1: Conv::new(format!("{p}.conv1"), 3, cfg.style_width, 3),
            conv2: Conv::new(format!("{p}.conv2"), cfg.style_width, 2 * cfg.style_width, 3),
            proj: Linear::new(format!("{p}.proj"), 2 * cfg.style_width, cfg.style_dim),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.specs(out);
        self.conv2.specs(out);
        self.proj.specs(out);
    }

    /// `images` is `[n, 3, H, W]`, `slices` the matching `[n, 1, H, W]`
    /// binary masks. Pixels outside the slice are zeroed before any
    /// convolution, so codes depend only on the segment; an empty slice
    /// yields an exactly zero code.
    pub fn forward<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        images: Var<'g, T>,
        slices: &Tensor<T>,
    ) -> Result<Var<'g, T>> {
        let (is, ss) = (images.shape(), slices.shape().to_vec());
        if is.len() != 4 || is[1] != 3 || ss != [is[0], 1, is[2], is[3]] {
            return Err(Error::Shape(format!("style encoder got image {is:?} with slice {ss:?}")));
        }
        if is[2] % 2 != 0 || is[3] % 2 != 0 {
            return Err(Error::Shape(format!("style encoder needs even extents, got {is:?}")));
        }
        let n = is[0];
        let g = b.graph();
        let m = g.constant(slices.clone());
        let mut h = self.conv1.forward(b, images.mul(m)).leaky_relu(LEAK);
        h = h.avg_pool2();
        h = self.conv2.forward(b, h).leaky_relu(LEAK);
        let mh = m.avg_pool2();
        let (hh, ww) = (is[2] / 2, is[3] / 2);
        let num = h.mul(mh).sum_to(&[n, h.shape()[1], 1, 1]);
        let area = mh.value().cast::<f64>();
        let mut den = Vec::with_capacity(n);
        let mut present = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = area.data()[i * hh * ww..(i + 1) * hh * ww].iter().sum();
            present.push(if a > 0.0 { 1.0 } else { 0.0 });
            den.push(a.max(1e-6));
        }
        let pooled = num
            .div(g.constant(Tensor::from_f64(&[n, 1, 1, 1], &den)))
            .reshape(&[n, h.shape()[1]]);
        let code = self.proj.forward(b, pooled);
        Ok(code.mul(g.constant(Tensor::from_f64(&[n, 1], &present))))
    }
}

/// Fuzzy composition + style matrix → image in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct ImageGenerator {
    base: usize,
    input: Conv,
    blocks: Vec<MsBlock>,
    head: Conv,
}

impl ImageGenerator {
    fn new(cfg: &NetConfig) -> Self {
        let ups = log2_ratio(cfg.resolution, cfg.generator_base, "").unwrap_or(0);
        let ran = |name: &str, cin: usize, cout: usize, resample| {
            MsBlock::new(
                name,
                MsBlockConfig {
                    in_channels: cin,
                    out_channels: cout,
                    resample,
                    norm: NormKind::RegionAdaptive,
                },
                cfg.style_dim,
                cfg.modulation_hidden,
            )
        };
        let mut width = cfg.generator_width;
        let mut blocks = vec![ran("gi.block0", width, width, Resample::None)];
        for i in 0..ups {
            let next = (cfg.generator_width >> (i + 1)).max(16).min(width);
            blocks.push(ran(&format!("gi.block{}", i + 1), width, next, Resample::Up));
            width = next;
        }
        Self {
            base: cfg.generator_base,
            input: Conv::new("gi.in", cfg.channels(), cfg.generator_width, 3),
            blocks,
            head: Conv::new("gi.head", width, 3, 3),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.input.specs(out);
        self.blocks.iter().for_each(|b| b.specs(out));
        self.head.specs(out);
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        fuzzy: Var<'g, T>,
        style: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let ctx = RegionContext::new(fuzzy, style)?;
        let mut h = self.input.forward(b, ctx.fuzzy_at(self.base, self.base));
        for blk in &self.blocks {
            h = blk.forward(b, h, Some(&ctx))?;
        }
        Ok(self.head.forward(b, h.leaky_relu(LEAK)).tanh())
    }
}

/// Stack of downsampling blocks ending in a 1×1 patch-logit head.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub prefix: String,
    pub in_channels: usize,
    stem: Conv,
    blocks: Vec<MsBlock>,
    head: Conv,
}

impl Discriminator {
    pub fn new(prefix: &str, in_channels: usize, width: usize, depth: usize) -> Self {
        let widths: Vec<usize> = (0..=depth).map(|i| width << i.saturating_sub(1).min(2)).collect();
        let blocks = (0..depth)
            .map(|i| {
                MsBlock::plain(
                    &format!("{prefix}.block{i}"),
                    MsBlockConfig {
                        in_channels: widths[i],
                        out_channels: widths[i + 1],
                        resample: Resample::Down,
                        norm: NormKind::None,
                    },
                )
            })
            .collect();
        Self {
            prefix: prefix.to_string(),
            in_channels,
            stem: Conv::new(format!("{prefix}.stem"), in_channels, width, 3),
            blocks,
            head: Conv::new(format!("{prefix}.head"), widths[depth], 1, 1),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.stem.specs(out);
        self.blocks.iter().for_each(|b| b.specs(out));
        self.head.specs(out);
    }

    pub fn declare<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let mut specs = Vec::new();
        self.specs(&mut specs);
        declare_specs(&specs, store, rng);
    }

    /// `[B, C, H, W]` → `[B, 1, H/2^d, W/2^d]` logits.
    pub fn forward<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {s:?}",
                self.in_channels
            )));
        }
        let mut h = self.stem.forward(b, x);
        for blk in &self.blocks {
            h = blk.forward(b, h, None)?;
        }
        Ok(self.head.forward(b, h.leaky_relu(LEAK)))
    }
}

/// Architecture of every network. Parameters live in a [`ParamStore`] under
/// the prefixes `gm.enc{i}.`, `gm.dec.`, `dm.`, `style.enc{i}.`, `gi.`, `di.`.
#[derive(Clone, Debug)]
pub struct Networks {
    pub config: NetConfig,
    pub structure_encoders: Vec<StructureEncoder>,
    pub decoder: StructureDecoder,
    pub mask_disc: Discriminator,
    pub style_encoders: Vec<StyleEncoder>,
    pub generator: ImageGenerator,
    pub image_disc: Discriminator,
}

impl Networks {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let n = config.regions;
        Ok(Self {
            structure_encoders: (0..n).map(|i| StructureEncoder::new(&config, i)).collect(),
            decoder: StructureDecoder::new(&config),
            mask_disc: Discriminator::new("dm", config.channels(), config.disc_width, config.disc_depth),
            style_encoders: (0..n).map(|i| StyleEncoder::new(&config, i)).collect(),
            generator: ImageGenerator::new(&config),
            image_disc: Discriminator::new("di", 3, config.disc_width, config.disc_depth),
            config,
        })
    }

    pub fn declare<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        declare_specs(&self.param_specs(), store, rng);
    }

    /// Every parameter in declaration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.specs(&mut out);
        out
    }

    fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.structure_encoders.iter().for_each(|e| e.specs(out));
        self.decoder.specs(out);
        self.mask_disc.specs(out);
        self.style_encoders.iter().for_each(|e| e.specs(out));
        self.generator.specs(out);
        self.image_disc.specs(out);
    }

    /// Encodes the non-empty slices of each region. `slices[i]` is the
    /// `[n_i, 1, H, W]` stack for region `i` (`None` when `n_i = 0`).
    pub fn encode_structure<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        slices: &[Option<Tensor<T>>],
    ) -> Result<Vec<Option<Var<'g, T>>>> {
        self.check_regions(slices.len())?;
        slices
            .iter()
            .zip(&self.structure_encoders)
            .map(|(s, enc)| {
                s.as_ref()
                    .map(|t| {
                        let shape = t.shape();
                        let r = self.config.resolution;
                        if shape.len() != 4 || shape[1..] != [1, r, r] {
                            return Err(Error::Shape(format!(
                                "region slices must be [n, 1, {r}, {r}], got {shape:?}"
                            )));
                        }
                        enc.forward(b, b.graph().constant(t.clone()))
                    })
                    .transpose()
            })
            .collect()
    }

    /// Concatenates picked codes along channels: `picks[s][i]` selects a row
    /// of `codes[i]` for sample `s`, or `None` for an all-zero code.
    pub fn composition_code<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        codes: &[Option<Var<'g, T>>],
        picks: &[Vec<Option<usize>>],
    ) -> Result<Var<'g, T>> {
        self.check_regions(codes.len())?;
        let cs = self.config.code_size;
        let parts: Vec<Var<'g, T>> = (0..self.config.regions)
            .map(|i| {
                let rows: Vec<Option<usize>> = picks.iter().map(|p| p[i]).collect();
                match codes[i] {
                    Some(c) if rows.iter().any(Option::is_some) => c.gather_rows(&rows),
                    _ => b.graph().constant(Tensor::zeros(&[picks.len(), self.config.code_channels, cs, cs])),
                }
            })
            .collect();
        Ok(concat(&parts, 1))
    }

    /// Per-region style codes: `inputs[i]` holds `[n_i, 3, H, W]` images
    /// and the matching slices.
    pub fn encode_style<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        inputs: &[Option<(Var<'g, T>, Tensor<T>)>],
    ) -> Result<Vec<Option<Var<'g, T>>>> {
        self.check_regions(inputs.len())?;
        inputs
            .iter()
            .zip(&self.style_encoders)
            .map(|(inp, enc)| inp.as_ref().map(|(img, sl)| enc.forward(b, *img, sl)).transpose())
            .collect()
    }

    /// `[B, δ, N]` style matrices from picked codes; unpicked columns are zero.
    pub fn style_matrix<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        codes: &[Option<Var<'g, T>>],
        picks: &[Vec<Option<usize>>],
    ) -> Result<Var<'g, T>> {
        self.check_regions(codes.len())?;
        let (bs, d) = (picks.len(), self.config.style_dim);
        let cols: Vec<Var<'g, T>> = (0..self.config.regions)
            .map(|i| {
                let rows: Vec<Option<usize>> = picks.iter().map(|p| p[i]).collect();
                match codes[i] {
                    Some(c) if rows.iter().any(Option::is_some) => c.gather_rows(&rows).reshape(&[bs, d, 1]),
                    _ => b.graph().constant(Tensor::zeros(&[bs, d, 1])),
                }
            })
            .collect();
        Ok(concat(&cols, 2))
    }

    fn check_regions(&self, n: usize) -> Result<()> {
        if n == self.config.regions {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "expected {} regions, got {n}",
                self.config.regions
            )))
        }
    }
}
