use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds one CHW image into `[C·kh·kw, H·W]` patches with zero "same"
/// padding.
fn im2col<S: Scalar>(x: &[S], g: Geom, cols: &mut [S]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // valid output columns: 0 <= ox + kx - pw < w
                let lo = pw.saturating_sub(kx);
                let hi = (g.w + pw).saturating_sub(kx).min(g.w);
                for oy in 0..g.h {
                    let line = &mut dst[oy * g.w..(oy + 1) * g.w];
                    let iy = oy as isize + ky as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        line.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].iter_mut().for_each(|v| *v = S::zero());
                    line[hi..].iter_mut().for_each(|v| *v = S::zero());
                    let shift = lo + kx - pw;
                    line[lo..hi].copy_from_slice(&src[shift..shift + (hi - lo)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
fn col2im<S: Scalar>(cols: &[S], g: Geom, x: &mut [S]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    let mut row = 0;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * hw..(row + 1) * hw];
                let lo = pw.saturating_sub(kx);
                let hi = (g.w + pw).saturating_sub(kx).min(g.w);
                if lo < hi {
                    for oy in 0..g.h {
                        let iy = oy as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = c * hw + iy as usize * g.w;
                        let shift = lo + kx - pw;
                        let dst = &mut x[base + shift..base + shift + (hi - lo)];
                        for (d, &v) in dst.iter_mut().zip(&src[oy * g.w + lo..oy * g.w + hi]) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Stride-1 2-d convolution with "same" zero padding. `self` is
    /// `[N, Cin, H, W]`, `weight` is `[Cout, Cin, kh, kw]` with odd kernel
    /// extents, `bias` is `[Cout]`.
    pub fn conv2d(self, weight: Var<'g, S>, bias: Option<Var<'g, S>>) -> Var<'g, S> {
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-d, got {ws:?}");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
        assert!(ws[2] % 2 == 1 && ws[3] % 2 == 1, "conv2d needs odd kernels");
        let (n, co) = (xs[0], ws[0]);
        let geom = Geom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
        };
        let (k, hw) = (geom.rows(), geom.hw());
        let pointwise = geom.kh == 1 && geom.kw == 1;
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            assert_eq!(b.shape(), &[co], "conv2d bias shape");
        }

        let mut out = vec![S::zero(); n * co * hw];
        let mut cols = if pointwise { Vec::new() } else { vec![S::zero(); k * hw] };
        for i in 0..n {
            let xi = &x.data()[i * geom.c * hw..(i + 1) * geom.c * hw];
            let oi = &mut out[i * co * hw..(i + 1) * co * hw];
            if let Some(b) = &b {
                for (c, &bv) in b.data().iter().enumerate() {
                    oi[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = bv);
                }
            }
            let patches: &[S] = if pointwise {
                xi
            } else {
                im2col(xi, geom, &mut cols);
                &cols
            };
            S::gemm(co, k, hw, w.data(), k, 1, patches, hw, 1, oi, b.is_some());
        }

        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.graph.push_op(
            Rc::new(Tensor::new(&[n, co, geom.h, geom.w], out)),
            &parents,
            Box::new(move |g, need| {
                let gd = g.data();
                let mut gx = need[0].then(|| Tensor::zeros(&xs));
                let mut gw = need[1].then(|| Tensor::zeros(&ws));
                let mut cols = vec![S::zero(); if pointwise { 0 } else { k * hw }];
                let mut gcols = vec![S::zero(); if pointwise || gx.is_none() { 0 } else { k * hw }];
                for i in 0..n {
                    let gi = &gd[i * co * hw..(i + 1) * co * hw];
                    let xi = &x.data()[i * geom.c * hw..(i + 1) * geom.c * hw];
                    if let Some(gw) = gw.as_mut() {
                        let patches: &[S] = if pointwise {
                            xi
                        } else {
                            im2col(xi, geom, &mut cols);
                            &cols
                        };
                        // dW += G · patchesᵀ
                        S::gemm(co, hw, k, gi, hw, 1, patches, 1, hw, gw.data_mut(), true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxi = &mut gx.data_mut()[i * geom.c * hw..(i + 1) * geom.c * hw];
                        // dpatches = Wᵀ · G
                        if pointwise {
                            S::gemm(k, co, hw, w.data(), 1, k, gi, hw, 1, gxi, true);
                        } else {
                            S::gemm(k, co, hw, w.data(), 1, k, gi, hw, 1, &mut gcols, false);
                            col2im(&gcols, geom, gxi);
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(need[2].then(|| {
                        let mut gb = vec![S::zero(); co];
                        for i in 0..n {
                            for (c, acc) in gb.iter_mut().enumerate() {
                                let off = (i * co + c) * hw;
                                *acc += gd[off..off + hw].iter().copied().sum::<S>();
                            }
                        }
                        Tensor::new(&[co], gb)
                    }));
                }
                grads
            }),
        )
    }

    /// `W / σ` where `σ = uᵀ·W·v` is the power-iteration estimate of the
    /// top singular value of `W` reshaped to `[rows, rest]`. `u` and `v` are
    /// treated as constants.
    pub fn spectral_normalize(self, u: &[S], v: &[S]) -> Var<'g, S> {
        let w = self.value();
        let rows = w.dim(0);
        let cols = w.numel() / rows;
        assert_eq!(u.len(), rows, "spectral u length");
        assert_eq!(v.len(), cols, "spectral v length");
        let outer: Vec<S> = (0..rows)
            .flat_map(|r| v.iter().map(move |&vc| u[r] * vc))
            .collect();
        let sigma: S = w.data().iter().zip(&outer).map(|(&a, &b)| a * b).sum();
        let inv = S::one() / sigma;
        let y = w.map(|x| x * inv);
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| {
                // d(W/σ) = G/σ − ⟨G, W⟩/σ² · u vᵀ
                let gw: S = g.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
                let c = gw * inv * inv;
                let mut out = g.map(|x| x * inv);
                for (o, &uv) in out.data_mut().iter_mut().zip(&outer) {
                    *o -= c * uv;
                }
                vec![Some(out)]
            }),
        )
    }
}
