use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, reduce_to, Tensor};

/// Splits `shape` around `axis` into (outer, axis, inner) extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn broadcast_tensor<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    let st = broadcast_strides(t.shape(), shape);
    let zero = vec![0; shape.len()];
    let mut out = Tensor::zeros(shape);
    let src = t.data();
    let dst = out.data_mut();
    for_each_broadcast(shape, &st, &zero, |o, i, _| dst[o] = src[i]);
    out
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn reshape(self, shape: &[usize]) -> Var<'g, S> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape);
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshape(&old))]),
        )
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(self) -> Var<'g, S> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Var<'g, S> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(self, shape: &[usize]) -> Var<'g, S> {
        let x = self.value();
        let full = x.shape().to_vec();
        assert_eq!(
            broadcast_shape(shape, &full).as_deref(),
            Some(&full[..]),
            "sum_to: {shape:?} does not broadcast to {full:?}"
        );
        let y = reduce_to(&x, shape);
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| vec![Some(broadcast_tensor(g, &full))]),
        )
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'g, S> {
        let x = self.value();
        let own = x.shape().to_vec();
        let y = broadcast_tensor(&x, shape);
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| vec![Some(reduce_to(g, &own))]),
        )
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        self.graph.push_op(
            Rc::new(Tensor::new(&out_shape, data)),
            &[self],
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                let dst = gx.data_mut();
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    dst[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Gathers rows of the leading axis; `None` yields an all-zero row.
    pub fn gather_rows(self, rows: &[Option<usize>]) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let per: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        let mut data = vec![S::zero(); rows.len() * per];
        for (r, src) in rows.iter().enumerate() {
            if let Some(s) = *src {
                assert!(s < shape[0], "gather_rows index {s} out of range");
                data[r * per..(r + 1) * per].copy_from_slice(&x.data()[s * per..(s + 1) * per]);
            }
        }
        let rows = rows.to_vec();
        self.graph.push_op(
            Rc::new(Tensor::new(&out_shape, data)),
            &[self],
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                let dst = gx.data_mut();
                for (r, src) in rows.iter().enumerate() {
                    if let Some(s) = *src {
                        for (d, &v) in dst[s * per..(s + 1) * per]
                            .iter_mut()
                            .zip(&g.data()[r * per..(r + 1) * per])
                        {
                            *d += v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(self) -> Var<'g, S> {
        let x = self.value();
        let y = transpose_last2(&x);
        self.graph.push_op(
            Rc::new(y),
            &[self],
            Box::new(move |g, _| vec![Some(transpose_last2(g))]),
        )
    }
}

pub(crate) fn transpose_last2<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let nd = t.ndim();
    assert!(nd >= 2);
    let (r, c) = (t.dim(nd - 2), t.dim(nd - 1));
    let batch = t.numel() / (r * c).max(1);
    let mut shape = t.shape().to_vec();
    shape.swap(nd - 2, nd - 1);
    let mut out = Tensor::zeros(&shape);
    let (src, dst) = (t.data(), out.data_mut());
    for b in 0..batch {
        let off = b * r * c;
        for i in 0..r {
            for j in 0..c {
                dst[off + j * r + i] = src[off + i * c + j];
            }
        }
    }
    out
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'g, S: Scalar>(parts: &[Var<'g, S>], axis: usize) -> Var<'g, S> {
    assert!(!parts.is_empty(), "concat of nothing");
    let graph = parts[0].graph;
    let values: Vec<Rc<Tensor<S>>> = parts.iter().map(|p| p.value()).collect();
    let first = values[0].shape().to_vec();
    let mut sizes = Vec::with_capacity(parts.len());
    for v in &values {
        let s = v.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
            assert!(d == axis || a == b, "concat extent mismatch on axis {d}");
        }
        sizes.push(s[axis]);
    }
    let total: usize = sizes.iter().sum();
    let mut out_shape = first.clone();
    out_shape[axis] = total;
    let (outer, _, inner) = split_at_axis(&out_shape, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &n) in values.iter().zip(&sizes) {
            data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    graph.push_op(
        Rc::new(Tensor::new(&out_shape, data)),
        parts,
        Box::new(move |g, need| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (i, &n) in sizes.iter().enumerate() {
                if need[i] {
                    let mut gp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g.data()[base..base + n * inner]);
                    }
                    grads.push(Some(Tensor::new(&shapes[i], gp)));
                } else {
                    grads.push(None);
                }
                offset += n;
            }
            grads
        }),
    )
}
