use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, reduce_to, Tensor};

/// `f(a, b)` evaluated over the broadcast of both shapes.
fn broadcast_apply<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let mut out = Tensor::zeros(&shape);
    let (da, db) = (a.data(), b.data());
    let dst = out.data_mut();
    for_each_broadcast(&shape, &sa, &sb, |o, i, j| dst[o] = f(da[i], db[j]));
    out
}

/// `f(g, other)` where `g` has the output shape and `other` broadcasts into it.
fn with_broadcast<S: Scalar>(g: &Tensor<S>, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    if g.shape() == other.shape() {
        return g.zip_map(other, f);
    }
    let zero = vec![0; g.ndim()];
    let so = broadcast_strides(other.shape(), g.shape());
    let mut out = Tensor::zeros(g.shape());
    let (dg, dother) = (g.data(), other.data());
    let dst = out.data_mut();
    for_each_broadcast(g.shape(), &zero, &so, |o, _, j| dst[o] = f(dg[o], dother[j]));
    out
}

/// Like [`with_broadcast`] with two operands broadcast into `g`'s shape.
fn with_broadcast2<S: Scalar>(
    g: &Tensor<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S, S) -> S,
) -> Tensor<S> {
    let sa = broadcast_strides(a.shape(), g.shape());
    let sb = broadcast_strides(b.shape(), g.shape());
    let mut out = Tensor::zeros(g.shape());
    let (dg, da, db) = (g.data(), a.data(), b.data());
    let dst = out.data_mut();
    for_each_broadcast(g.shape(), &sa, &sb, |o, i, j| dst[o] = f(dg[o], da[i], db[j]));
    out
}

impl<'g, S: Scalar> Var<'g, S> {
    fn unary(
        self,
        f: impl Fn(S) -> S,
        // derivative from (input, output)
        df: impl Fn(S, S) -> S + 'static,
    ) -> Var<'g, S> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let yc = y.clone();
        self.graph.push_op(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut out = Tensor::zeros(g.shape());
                for (((o, &gi), &xi), &yi) in out
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(x.data())
                    .zip(yc.data())
                {
                    *o = gi * df(xi, yi);
                }
                vec![Some(out)]
            }),
        )
    }

    pub fn add(self, other: Var<'g, S>) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let y = broadcast_apply(&a, &b, |x, y| x + y);
        self.graph.push_op(
            Rc::new(y),
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| reduce_to(g, &sa)),
                    need[1].then(|| reduce_to(g, &sb)),
                ]
            }),
        )
    }

    pub fn sub(self, other: Var<'g, S>) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let y = broadcast_apply(&a, &b, |x, y| x - y);
        self.graph.push_op(
            Rc::new(y),
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| reduce_to(g, &sa)),
                    need[1].then(|| reduce_to(g, &sb).map(|v| -v)),
                ]
            }),
        )
    }

    pub fn mul(self, other: Var<'g, S>) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let y = broadcast_apply(&a, &b, |x, y| x * y);
        self.graph.push_op(
            Rc::new(y),
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| reduce_to(&with_broadcast(g, &b, |g, b| g * b), a.shape())),
                    need[1].then(|| reduce_to(&with_broadcast(g, &a, |g, a| g * a), b.shape())),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'g, S>) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let y = broadcast_apply(&a, &b, |x, y| x / y);
        self.graph.push_op(
            Rc::new(y),
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| reduce_to(&with_broadcast(g, &b, |g, b| g / b), a.shape())),
                    need[1].then(|| {
                        reduce_to(&with_broadcast2(g, &a, &b, |g, a, b| -g * a / (b * b)), b.shape())
                    }),
                ]
            }),
        )
    }

    pub fn neg(self) -> Var<'g, S> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'g, S> {
        let c = S::from_f64(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g, S> {
        let c = S::from_f64(c);
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn exp(self) -> Var<'g, S> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'g, S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    pub fn sqrt(self) -> Var<'g, S> {
        self.unary(|x| x.sqrt(), |_, y| S::from_f64(0.5) / y)
    }

    pub fn square(self) -> Var<'g, S> {
        self.unary(|x| x * x, |x, _| S::from_f64(2.0) * x)
    }

    pub fn tanh(self) -> Var<'g, S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'g, S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    /// `|x|`, with derivative 0 at the origin.
    pub fn abs(self) -> Var<'g, S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                let r = x.re();
                if r > 0.0 {
                    S::one()
                } else if r < 0.0 {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, S> {
        let s = S::from_f64(slope);
        self.unary(
            move |x| if x.re() > 0.0 { x } else { x * s },
            move |x, _| if x.re() > 0.0 { S::one() } else { s },
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'g, S> {
        self.unary(softplus, |x, _| sigmoid(x))
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x.re() >= 0.0 {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn softplus<S: Scalar>(x: S) -> S {
    let pos = if x.re() > 0.0 { x } else { S::zero() };
    pos + (S::one() + (-x.abs()).exp()).ln()
}
