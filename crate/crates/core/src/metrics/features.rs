//! Feature extractors for Fréchet distances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::RgbImage;

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn features(&self, image: &RgbImage) -> Vec<f64>;
}

struct Conv {
    cin: usize,
    cout: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Conv {
    /// 3×3, stride 2, zero padding 1, ReLU.
    fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = vec![0.0; self.cout * oh * ow];
        for o in 0..self.cout {
            for y in 0..oh {
                for x0 in 0..ow {
                    let mut acc = self.b[o];
                    for c in 0..self.cin {
                        for ky in 0..3 {
                            let iy = (2 * y + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (2 * x0 + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.w[((o * self.cin + c) * 3 + ky) * 3 + kx]
                                    * x[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + x0] = acc.max(0.0);
                }
            }
        }
        (out, oh, ow)
    }
}

/// A small CNN with fixed random weights: three stride-2 3×3 convolutions
/// (3→16→32→32, ReLU) followed by global average pooling. Distances computed
/// from it are "FID-like" and not comparable to published FID values.
pub struct RandomProjectionCnn {
    layers: Vec<Conv>,
    name: String,
}

impl RandomProjectionCnn {
    pub const DEFAULT_SEED: u64 = 0x5EED_F1D;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [(3, 16), (16, 32), (32, 32)]
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (9 * cin) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Conv {
                    cin,
                    cout,
                    w: (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect(),
                    b: (0..cout).map(|_| normal.sample(&mut rng) * 0.1).collect(),
                }
            })
            .collect();
        Self {
            layers,
            name: format!("random-cnn-{seed:x}"),
        }
    }
}

impl Default for RandomProjectionCnn {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for RandomProjectionCnn {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cout)
    }

    fn features(&self, image: &RgbImage) -> Vec<f64> {
        let mut x: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
        let (mut h, mut w) = (image.height, image.width);
        for l in &self.layers {
            (x, h, w) = l.forward(&x, h, w);
        }
        let hw = (h * w) as f64;
        x.chunks(h * w).map(|c| c.iter().sum::<f64>() / hw).collect()
    }
}
