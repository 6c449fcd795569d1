use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<'g, S: Scalar> Var<'g, S> {
    /// Per-sample, per-channel normalization over the spatial axes, without
    /// affine parameters.
    pub fn instance_norm(self, eps: f64) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert_eq!(shape.len(), 4, "instance_norm expects NCHW");
        let planes = shape[0] * shape[1];
        let hw = shape[2] * shape[3];
        let inv_n = S::from_f64(1.0 / hw as f64);
        let eps = S::from_f64(eps);
        let mut y = vec![S::zero(); x.numel()];
        let mut inv_std = vec![S::zero(); planes];
        for p in 0..planes {
            let src = &x.data()[p * hw..(p + 1) * hw];
            let mean = src.iter().copied().sum::<S>() * inv_n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[p] = is;
            for (o, &v) in y[p * hw..(p + 1) * hw].iter_mut().zip(src) {
                *o = (v - mean) * is;
            }
        }
        let y = Rc::new(Tensor::new(&shape, y));
        let yc = y.clone();
        self.graph.push_op(
            y,
            &[self],
            Box::new(move |g, _| {
                // dx = (dy − mean(dy) − y·mean(dy·y)) / σ
                let mut gx = vec![S::zero(); g.numel()];
                for p in 0..planes {
                    let gy = &g.data()[p * hw..(p + 1) * hw];
                    let yp = &yc.data()[p * hw..(p + 1) * hw];
                    let mg = gy.iter().copied().sum::<S>() * inv_n;
                    let mgy = gy.iter().zip(yp).map(|(&a, &b)| a * b).sum::<S>() * inv_n;
                    for ((o, &gv), &yv) in gx[p * hw..(p + 1) * hw].iter_mut().zip(gy).zip(yp) {
                        *o = (gv - mg - yv * mgy) * inv_std[p];
                    }
                }
                vec![Some(Tensor::new(&shape, gx))]
            }),
        )
    }

    /// Softmax over axis 1 of an `[N, C, ...]` tensor.
    pub fn softmax_channels(self) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 2);
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut y = vec![S::zero(); x.numel()];
        for b in 0..n {
            let base = b * c * inner;
            for p in 0..inner {
                let at = |ch: usize| base + ch * inner + p;
                let mut m = x.data()[at(0)];
                for ch in 1..c {
                    if x.data()[at(ch)].re() > m.re() {
                        m = x.data()[at(ch)];
                    }
                }
                let mut z = S::zero();
                for ch in 0..c {
                    let e = (x.data()[at(ch)] - m).exp();
                    y[at(ch)] = e;
                    z += e;
                }
                for ch in 0..c {
                    y[at(ch)] = y[at(ch)] / z;
                }
            }
        }
        let y = Rc::new(Tensor::new(&shape, y));
        let yc = y.clone();
        self.graph.push_op(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![S::zero(); g.numel()];
                for b in 0..n {
                    let base = b * c * inner;
                    for p in 0..inner {
                        let at = |ch: usize| base + ch * inner + p;
                        let dot: S = (0..c).map(|ch| g.data()[at(ch)] * yc.data()[at(ch)]).sum();
                        for ch in 0..c {
                            gx[at(ch)] = yc.data()[at(ch)] * (g.data()[at(ch)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(&shape, gx))]
            }),
        )
    }

    /// Euclidean norm along the last axis. The gradient at a zero row is
    /// taken as zero rather than undefined.
    pub fn norm_last(self) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("norm_last needs at least one axis");
        let rows = x.numel() / d.max(1);
        let norms: Vec<S> = (0..rows)
            .map(|r| {
                let mut acc = S::zero();
                for &v in &x.data()[r * d..(r + 1) * d] {
                    acc = acc + v * v;
                }
                acc.sqrt()
            })
            .collect();
        let y = Tensor::new(&shape[..shape.len() - 1], norms.clone());
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![S::zero(); x.numel()];
                for r in 0..rows {
                    let n = norms[r];
                    if n.re() == 0.0 {
                        continue;
                    }
                    let k = g.data()[r] / n;
                    for (o, &v) in gx[r * d..(r + 1) * d].iter_mut().zip(&x.data()[r * d..(r + 1) * d]) {
                        *o = k * v;
                    }
                }
                vec![Some(Tensor::new(&shape, gx))]
            }),
        )
    }
}
