//! Trained network state plus single-sample inference entry points.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionmix_autograd::{Graph, Scalar, Tensor};

use super::nets::{NetConfig, Networks};
use super::params::{Binder, ParamStore};
use crate::composition::{CompositionSpec, FuzzyComposition};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mask::{RegionSlice, SemanticMask, SourceId};
use crate::taxonomy::RegionTaxonomy;

/// δ × N matrix of per-region style codes, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleMatrix {
    pub style_dim: usize,
    pub regions: usize,
    pub data: Vec<f32>,
}

impl StyleMatrix {
    pub fn zeros(style_dim: usize, regions: usize) -> Self {
        Self {
            style_dim,
            regions,
            data: vec![0.0; style_dim * regions],
        }
    }

    pub fn column(&self, i: usize) -> Vec<f32> {
        (0..self.style_dim).map(|k| self.data[k * self.regions + i]).collect()
    }

    pub fn set_column(&mut self, i: usize, code: &[f32]) {
        assert_eq!(code.len(), self.style_dim);
        for (k, &v) in code.iter().enumerate() {
            self.data[k * self.regions + i] = v;
        }
    }

    pub fn is_column_zero(&self, i: usize) -> bool {
        self.column(i).iter().all(|&v| v == 0.0)
    }
}

/// Output of one synthesis.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub fuzzy: FuzzyComposition,
    pub mask: SemanticMask,
    pub image: RgbImage,
    pub style: StyleMatrix,
}

pub(crate) fn slices_tensor<T: Scalar>(slices: &[&RegionSlice]) -> Tensor<T> {
    let (h, w) = (slices[0].height, slices[0].width);
    let data = slices
        .iter()
        .flat_map(|s| s.data.iter().map(|&v| T::from_f64(v as f64)))
        .collect();
    Tensor::new(&[slices.len(), 1, h, w], data)
}

pub(crate) fn images_tensor<T: Scalar>(images: &[&RgbImage]) -> Tensor<T> {
    let (h, w) = (images[0].height, images[0].width);
    let data = images
        .iter()
        .flat_map(|im| im.data.iter().map(|&v| T::from_f64(v as f64)))
        .collect();
    Tensor::new(&[images.len(), 3, h, w], data)
}

pub(crate) fn one_hot_tensor<T: Scalar>(masks: &[&SemanticMask], channels: usize) -> Tensor<T> {
    let (h, w) = (masks[0].height(), masks[0].width());
    let data = masks
        .iter()
        .flat_map(|m| m.one_hot(channels).into_iter().map(|v| T::from_f64(v as f64)))
        .collect();
    Tensor::new(&[masks.len(), channels, h, w], data)
}

/// Network architecture, taxonomy and parameters.
#[derive(Clone, Debug)]
pub struct NetworkBundle {
    pub taxonomy: RegionTaxonomy,
    pub nets: Networks,
    pub params: ParamStore,
    /// Training steps applied so far.
    pub step: u64,
}

impl NetworkBundle {
    /// Freshly initialized networks; parameters are a pure function of `seed`.
    pub fn new(taxonomy: RegionTaxonomy, config: NetConfig, seed: u64) -> Result<Self> {
        if config.regions != taxonomy.len() {
            return Err(Error::Config(format!(
                "network config has {} regions but taxonomy `{}` has {}",
                config.regions,
                taxonomy.name(),
                taxonomy.len()
            )));
        }
        let nets = Networks::new(config)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        nets.declare(&mut params, &mut rng);
        Ok(Self {
            taxonomy,
            nets,
            params,
            step: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.nets.config
    }

    fn check_mask(&self, m: &SemanticMask) -> Result<()> {
        let r = self.config().resolution;
        if (m.height(), m.width()) != (r, r) {
            return Err(Error::Shape(format!(
                "mask `{}` is {}x{}, networks expect {r}x{r}",
                m.source_id(),
                m.height(),
                m.width()
            )));
        }
        m.validate(&self.taxonomy)
    }

    fn check_image(&self, im: &RgbImage) -> Result<()> {
        let r = self.config().resolution;
        if (im.height, im.width) != (r, r) {
            return Err(Error::Shape(format!(
                "image is {}x{}, networks expect {r}x{r}",
                im.height, im.width
            )));
        }
        Ok(())
    }

    /// Structure code of one region slice, `[code_channels, s, s]` flattened.
    /// An empty slice gives the all-zero code.
    pub fn structure_code(&self, slice: &RegionSlice, i: usize) -> Result<Vec<f32>> {
        self.taxonomy.check_index(i)?;
        let cfg = self.config();
        let r = cfg.resolution;
        if (slice.height, slice.width) != (r, r) {
            return Err(Error::Shape(format!(
                "slice is {}x{}, networks expect {r}x{r}",
                slice.height, slice.width
            )));
        }
        if slice.is_empty() {
            return Ok(vec![0.0; cfg.code_channels * cfg.code_size * cfg.code_size]);
        }
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let mut inputs = vec![None; cfg.regions];
        inputs[i] = Some(slices_tensor::<f32>(&[slice]));
        let codes = self.nets.encode_structure(&b, &inputs)?;
        Ok(codes[i].expect("encoded").value().data().to_vec())
    }

    /// Decodes the composition described by `spec` from `masks`.
    pub fn structure_generate(&self, spec: &CompositionSpec, masks: &[&SemanticMask]) -> Result<FuzzyComposition> {
        spec.validate(&self.taxonomy)?;
        let ids: Vec<SourceId> = masks.iter().map(|m| m.source_id().clone()).collect();
        let which = spec.resolve(&ids)?;
        for m in masks {
            self.check_mask(m)?;
        }
        let cfg = self.config();
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let mut slices = Vec::with_capacity(cfg.regions);
        let mut pick = Vec::with_capacity(cfg.regions);
        for (i, src) in which.iter().enumerate() {
            let slice = src.map(|s| masks[s].region_slice(i)).filter(|s| !s.is_empty());
            pick.push(slice.as_ref().map(|_| 0));
            slices.push(slice.map(|s| slices_tensor::<f32>(&[&s])));
        }
        let codes = self.nets.encode_structure(&b, &slices)?;
        let code = self.nets.composition_code(&b, &codes, &[pick])?;
        let fc = self.nets.decoder.forward(&b, code)?;
        let r = cfg.resolution;
        FuzzyComposition::new(cfg.channels(), r, r, fc.value().data().to_vec())
    }

    /// Style code of the segment of `image` under `slice`.
    pub fn style_code(&self, image: &RgbImage, slice: &RegionSlice, i: usize) -> Result<Vec<f32>> {
        self.taxonomy.check_index(i)?;
        if (image.height, image.width) != (slice.height, slice.width) {
            return Err(Error::Shape(format!(
                "image {}x{} vs slice {}x{}",
                image.height, image.width, slice.height, slice.width
            )));
        }
        let cfg = self.config();
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let img = g.constant(images_tensor::<f32>(&[image]));
        let code = self.nets.style_encoders[i].forward(&b, img, &slices_tensor::<f32>(&[slice]))?;
        debug_assert_eq!(code.value().numel(), cfg.style_dim);
        Ok(code.value().data().to_vec())
    }

    /// Column-stacks style codes in taxonomy order; missing regions are zero.
    pub fn build_style_matrix(&self, segments: &BTreeMap<usize, (&RgbImage, &RegionSlice)>) -> Result<StyleMatrix> {
        let mut m = StyleMatrix::zeros(self.config().style_dim, self.config().regions);
        for (&i, (img, slice)) in segments {
            m.set_column(i, &self.style_code(img, slice, i)?);
        }
        Ok(m)
    }

    pub fn image_generate(&self, fc: &FuzzyComposition, style: &StyleMatrix) -> Result<RgbImage> {
        let cfg = self.config();
        let r = cfg.resolution;
        if (fc.channels(), fc.height(), fc.width()) != (cfg.channels(), r, r) {
            return Err(Error::Shape(format!(
                "composition is {}x{}x{}, networks expect {}x{r}x{r}",
                fc.channels(),
                fc.height(),
                fc.width(),
                cfg.channels()
            )));
        }
        if (style.style_dim, style.regions) != (cfg.style_dim, cfg.regions) {
            return Err(Error::Shape(format!(
                "style matrix is {}x{}, networks expect {}x{}",
                style.style_dim, style.regions, cfg.style_dim, cfg.regions
            )));
        }
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let fcv = g.constant(Tensor::new(&[1, cfg.channels(), r, r], fc.probs().to_vec()));
        let sv = g.constant(Tensor::new(&[1, cfg.style_dim, cfg.regions], style.data.clone()));
        let img = self.nets.generator.forward(&b, fcv, sv)?;
        RgbImage::new(r, r, img.value().data().to_vec())
    }

    /// Patch logits of the mask discriminator for one composition.
    pub fn discriminate_mask(&self, fc: &FuzzyComposition) -> Result<Tensor<f32>> {
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let x = g.constant(Tensor::new(
            &[1, fc.channels(), fc.height(), fc.width()],
            fc.probs().to_vec(),
        ));
        Ok((*self.nets.mask_disc.forward(&b, x)?.value()).clone())
    }

    pub fn discriminate_image(&self, image: &RgbImage) -> Result<Tensor<f32>> {
        let g = Graph::<f32>::new();
        let b = Binder::frozen(&g, &self.params);
        let x = g.constant(images_tensor::<f32>(&[image]));
        Ok((*self.nets.image_disc.forward(&b, x)?.value()).clone())
    }

    /// Composition, style extraction and image generation for `spec`.
    /// `sources` pairs every referenced mask with its image.
    pub fn synthesize(&self, spec: &CompositionSpec, sources: &[(&SemanticMask, &RgbImage)]) -> Result<Synthesis> {
        for (m, im) in sources {
            self.check_mask(m)?;
            self.check_image(im)?;
        }
        let masks: Vec<&SemanticMask> = sources.iter().map(|(m, _)| *m).collect();
        let fuzzy = self.structure_generate(spec, &masks)?;
        let ids: Vec<SourceId> = masks.iter().map(|m| m.source_id().clone()).collect();
        let which = spec.resolve(&ids)?;
        let slices: Vec<Option<RegionSlice>> = which
            .iter()
            .enumerate()
            .map(|(i, s)| s.map(|s| masks[s].region_slice(i)))
            .collect();
        let segments: BTreeMap<usize, (&RgbImage, &RegionSlice)> = which
            .iter()
            .enumerate()
            .filter_map(|(i, s)| Some((i, (sources[(*s)?].1, slices[i].as_ref()?))))
            .collect();
        let style = self.build_style_matrix(&segments)?;
        let image = self.image_generate(&fuzzy, &style)?;
        let mask = fuzzy.harden("synthesized");
        Ok(Synthesis {
            fuzzy,
            mask,
            image,
            style,
        })
    }
}
