//! Convolution, linear, region-adaptive normalization and the residual
//! MS block.

use std::cell::RefCell;

use rand::Rng;
use regionmix_autograd::{Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{normal_tensor, Binder, ParamStore};
use crate::error::{Error, Result};

pub const LEAK: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
/// Power iterations used when a spectral weight is first declared.
const SN_INIT_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
}

/// Name, shape and initializer of one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Used through spectral normalization.
    pub spectral: bool,
}

impl ParamSpec {
    fn zeros(name: String, shape: &[usize]) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
            init: Init::Zeros,
            spectral: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Initializes `specs` in order, drawing from `rng`.
pub fn declare_specs<R: Rng + ?Sized>(specs: &[ParamSpec], store: &mut ParamStore, rng: &mut R) {
    for s in specs {
        let t = match s.init {
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::Normal(std) => normal_tensor(&s.shape, std, rng),
        };
        store.insert(s.name.clone(), t);
        if s.spectral {
            store.init_spectral(&s.name, rng, SN_INIT_ITERS);
        }
    }
}

/// Same-padded, stride-1 convolution with a spectrally normalized kernel.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = (self.cin * self.k * self.k) as f64;
        out.push(ParamSpec {
            name: self.weight_name(),
            shape: vec![self.cout, self.cin, self.k, self.k],
            init: Init::Normal((2.0 / fan_in).sqrt()),
            spectral: true,
        });
        out.push(ParamSpec::zeros(format!("{}.b", self.name), &[self.cout]));
    }

    pub fn forward<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = b.sn_param(&self.weight_name());
        x.conv2d(w, Some(b.param(&format!("{}.b", self.name))))
    }
}

/// Affine map on the last axis: `x · W + b` with `W` stored `[din, dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Self {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.w", self.name),
            shape: vec![self.din, self.dout],
            init: Init::Normal((1.0 / self.din as f64).sqrt()),
            spectral: false,
        });
        out.push(ParamSpec::zeros(format!("{}.b", self.name), &[self.dout]));
    }

    pub fn forward<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.matmul(b.param(&format!("{}.w", self.name)))
            .add(b.param(&format!("{}.b", self.name)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    None,
    Down,
    Up,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    Instance,
    RegionAdaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub resample: Resample,
    pub norm: NormKind,
}

/// Fuzzy composition and style matrix shared by every region-adaptive layer
/// of one generator pass. Resampled compositions are cached per resolution.
pub struct RegionContext<'g, T: Scalar> {
    /// `[B, N+1, H, W]`, channel sums 1.
    pub fuzzy: Var<'g, T>,
    /// `[B, δ, N]`.
    pub style: Var<'g, T>,
    cache: RefCell<Vec<((usize, usize), Var<'g, T>)>>,
}

impl<'g, T: Scalar> RegionContext<'g, T> {
    pub fn new(fuzzy: Var<'g, T>, style: Var<'g, T>) -> Result<Self> {
        let (fs, ss) = (fuzzy.shape(), style.shape());
        if fs.len() != 4 || ss.len() != 3 || fs[0] != ss[0] || fs[1] != ss[2] + 1 {
            return Err(Error::Shape(format!(
                "fuzzy composition {fs:?} does not match style matrix {ss:?}"
            )));
        }
        Ok(Self {
            fuzzy,
            style,
            cache: RefCell::new(Vec::new()),
        })
    }

    pub fn regions(&self) -> usize {
        self.style.shape()[2]
    }

    /// The composition resized to `h × w` and renormalized per pixel.
    pub fn fuzzy_at(&self, h: usize, w: usize) -> Var<'g, T> {
        let shape = self.fuzzy.shape();
        if (shape[2], shape[3]) == (h, w) {
            return self.fuzzy;
        }
        if let Some((_, v)) = self.cache.borrow().iter().find(|(k, _)| *k == (h, w)) {
            return *v;
        }
        let r = self.fuzzy.resize_bilinear(h, w);
        let total = r.sum_to(&[shape[0], 1, h, w]);
        let r = r.div(total);
        self.cache.borrow_mut().push(((h, w), r));
        r
    }
}

/// Instance normalization modulated per pixel by a fuzzy-weighted mix of
/// per-region scale and shift vectors. Each style column passes through a
/// shared MLP; the background channel gets learned style-free vectors.
#[derive(Clone, Debug)]
pub struct RegionAdaptiveNorm {
    pub name: String,
    pub channels: usize,
    pub hidden: Linear,
    pub gamma: Linear,
    pub beta: Linear,
}

impl RegionAdaptiveNorm {
    pub fn new(name: &str, channels: usize, style_dim: usize, hidden: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            hidden: Linear::new(format!("{name}.mlp"), style_dim, hidden),
            gamma: Linear::new(format!("{name}.gamma"), hidden, channels),
            beta: Linear::new(format!("{name}.beta"), hidden, channels),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.hidden.specs(out);
        self.gamma.specs(out);
        self.beta.specs(out);
        out.push(ParamSpec::zeros(format!("{}.bg_gamma", self.name), &[self.channels, 1]));
        out.push(ParamSpec::zeros(format!("{}.bg_beta", self.name), &[self.channels, 1]));
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        x: Var<'g, T>,
        ctx: &RegionContext<'g, T>,
    ) -> Result<Var<'g, T>> {
        let xs = x.shape();
        let (bs, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let n = ctx.regions();
        if ctx.style.shape()[0] != bs {
            return Err(Error::Shape(format!(
                "style batch {} vs features batch {bs}",
                ctx.style.shape()[0]
            )));
        }
        let normed = x.instance_norm(NORM_EPS);
        // [B, N, δ] -> [B, N, hidden] -> [B, N, C]
        let cols = ctx.style.transpose_last2();
        let hid = self.hidden.forward(b, cols).leaky_relu(LEAK);
        let gamma_r = self.gamma.forward(b, hid).transpose_last2();
        let beta_r = self.beta.forward(b, hid).transpose_last2();
        let fc = ctx.fuzzy_at(h, w);
        let fc_r = fc.narrow(1, 0, n).reshape(&[bs, n, h * w]);
        let fc_bg = fc.narrow(1, n, 1).reshape(&[bs, 1, h * w]);
        let gamma = gamma_r
            .matmul(fc_r)
            .add(b.param(&format!("{}.bg_gamma", self.name)).mul(fc_bg));
        let beta = beta_r
            .matmul(fc_r)
            .add(b.param(&format!("{}.bg_beta", self.name)).mul(fc_bg));
        let gamma = gamma.reshape(&[bs, c, h, w]);
        let beta = beta.reshape(&[bs, c, h, w]);
        Ok(normed.mul(gamma.add_scalar(1.0)).add(beta))
    }
}

#[derive(Clone, Debug)]
enum Norm {
    None,
    Instance,
    Region(RegionAdaptiveNorm),
}

impl Norm {
    fn new(kind: NormKind, name: &str, channels: usize, style_dim: usize, hidden: usize) -> Self {
        match kind {
            NormKind::None => Norm::None,
            NormKind::Instance => Norm::Instance,
            NormKind::RegionAdaptive => Norm::Region(RegionAdaptiveNorm::new(name, channels, style_dim, hidden)),
        }
    }

    fn forward<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        x: Var<'g, T>,
        ctx: Option<&RegionContext<'g, T>>,
    ) -> Result<Var<'g, T>> {
        match self {
            Norm::None => Ok(x),
            Norm::Instance => Ok(x.instance_norm(NORM_EPS)),
            Norm::Region(ran) => {
                let ctx = ctx.ok_or_else(|| {
                    Error::Config("region-adaptive normalization needs a composition and style matrix".into())
                })?;
                ran.forward(b, x, ctx)
            }
        }
    }
}

/// Pre-activation residual block:
/// `norm → lrelu → [up] → conv3 → norm → lrelu → conv3 → [pool]`, plus a
/// shortcut `[up] → [1×1 conv if channels change] → [pool]`.
#[derive(Clone, Debug)]
pub struct MsBlock {
    pub name: String,
    pub config: MsBlockConfig,
    norm1: Norm,
    norm2: Norm,
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

impl MsBlock {
    /// `style_dim` and `hidden` size the modulation MLP of region-adaptive
    /// blocks and are ignored otherwise.
    pub fn new(name: &str, config: MsBlockConfig, style_dim: usize, hidden: usize) -> Self {
        let (ci, co) = (config.in_channels, config.out_channels);
        Self {
            name: name.to_string(),
            config,
            norm1: Norm::new(config.norm, &format!("{name}.norm1"), ci, style_dim, hidden),
            norm2: Norm::new(config.norm, &format!("{name}.norm2"), co, style_dim, hidden),
            conv1: Conv::new(format!("{name}.conv1"), ci, co, 3),
            conv2: Conv::new(format!("{name}.conv2"), co, co, 3),
            shortcut: (ci != co).then(|| Conv::new(format!("{name}.skip"), ci, co, 1)),
        }
    }

    pub fn plain(name: &str, config: MsBlockConfig) -> Self {
        Self::new(name, config, 0, 0)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for n in [&self.norm1, &self.norm2] {
            if let Norm::Region(ran) = n {
                ran.specs(out);
            }
        }
        self.conv1.specs(out);
        self.conv2.specs(out);
        if let Some(s) = &self.shortcut {
            s.specs(out);
        }
    }

    /// Declares this block's parameters on its own (tests and tools).
    pub fn declare<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let mut specs = Vec::new();
        self.specs(&mut specs);
        declare_specs(&specs, store, rng);
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        b: &Binder<'g, T>,
        x: Var<'g, T>,
        ctx: Option<&RegionContext<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "block `{}` expects {} input channels, got {shape:?}",
                self.name, self.config.in_channels
            )));
        }
        if self.config.resample == Resample::Down && (shape[2] % 2 != 0 || shape[3] % 2 != 0) {
            return Err(Error::Shape(format!(
                "block `{}` cannot halve odd extent {shape:?}",
                self.name
            )));
        }
        let up = self.config.resample == Resample::Up;
        let down = self.config.resample == Resample::Down;

        let mut h = self.norm1.forward(b, x, ctx)?.leaky_relu(LEAK);
        if up {
            h = h.upsample2();
        }
        h = self.conv1.forward(b, h);
        h = self.norm2.forward(b, h, ctx)?.leaky_relu(LEAK);
        h = self.conv2.forward(b, h);
        if down {
            h = h.avg_pool2();
        }

        let mut s = x;
        if up {
            s = s.upsample2();
        }
        if let Some(sc) = &self.shortcut {
            s = sc.forward(b, s);
        }
        if down {
            s = s.avg_pool2();
        }
        Ok(h.add(s))
    }
}
