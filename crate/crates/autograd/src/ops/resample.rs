use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two-tap linear interpolation table with half-pixel centers
/// (`align_corners = false`).
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn nchw(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW, got {shape:?}");
    (shape[0] * shape[1], shape[2], shape[3])
}

/// Bilinear resize of `[planes, h, w]` data (no autodiff).
pub fn resize_bilinear_data<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<S> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (wy0, wy1) = (S::from_f64(1.0 - ly), S::from_f64(ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (wx0, wx1) = (S::from_f64(1.0 - lx), S::from_f64(lx));
                dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    out
}

impl<'g, S: Scalar> Var<'g, S> {
    /// 2×2 average pooling with stride 2 on NCHW input.
    pub fn avg_pool2(self) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = nchw(&shape);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even extents, got {shape:?}");
        let (oh, ow) = (h / 2, w / 2);
        let q = S::from_f64(0.25);
        let mut out = vec![S::zero(); planes * oh * ow];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = 2 * oy * w + 2 * ox;
                    out[p * oh * ow + oy * ow + ox] =
                        (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
                }
            }
        }
        self.graph.push_op(
            Rc::new(Tensor::new(&[shape[0], shape[1], oh, ow], out)),
            &[self],
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                let dst = gx.data_mut();
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let v = g.data()[p * oh * ow + oy * ow + ox] * q;
                            let i = p * h * w + 2 * oy * w + 2 * ox;
                            dst[i] += v;
                            dst[i + 1] += v;
                            dst[i + w] += v;
                            dst[i + w + 1] += v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear resize of NCHW input to `oh × ow` with half-pixel centers.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = nchw(&shape);
        if (h, w) == (oh, ow) {
            return self;
        }
        let out = resize_bilinear_data(x.data(), planes, h, w, oh, ow);
        let ty = taps(h, oh);
        let tx = taps(w, ow);
        self.graph.push_op(
            Rc::new(Tensor::new(&[shape[0], shape[1], oh, ow], out)),
            &[self],
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                let dst = gx.data_mut();
                for p in 0..planes {
                    let base = p * h * w;
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let v = g.data()[p * oh * ow + oy * ow + ox];
                            let (a, b) = (S::from_f64(1.0 - ly), S::from_f64(ly));
                            let (c, d) = (S::from_f64(1.0 - lx), S::from_f64(lx));
                            dst[base + y0 * w + x0] += v * a * c;
                            dst[base + y0 * w + x1] += v * a * d;
                            dst[base + y1 * w + x0] += v * b * c;
                            dst[base + y1 * w + x1] += v * b * d;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Doubles spatial extents by bilinear interpolation.
    pub fn upsample2(self) -> Var<'g, S> {
        let s = self.shape();
        self.resize_bilinear(s[2] * 2, s[3] * 2)
    }
}
