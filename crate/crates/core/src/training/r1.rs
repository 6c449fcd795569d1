//! R1 gradient penalty `(γ/2) · mean_b ‖∇ₓ Σ D(x_b)‖²` on real samples.
//!
//! The penalty's parameter gradient is `(γ/B) · (∂²S/∂θ∂x) g` with
//! `S = Σ D(x)` and `g = ∇ₓ S`, a mixed Hessian-vector product. It is
//! computed exactly by running the forward and backward pass over dual
//! numbers whose input tangent is `g`.

use std::collections::BTreeMap;

use regionmix_autograd::{Dual, Graph, Scalar, Tensor, Var};

use crate::error::Result;
use crate::nn::{Binder, Discriminator, ParamStore};

/// A network scoring its input; parameters under `prefix()` are the ones R1
/// differentiates.
pub trait Critic {
    fn prefix(&self) -> &str;
    fn critic<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>>;
}

impl Critic for Discriminator {
    fn prefix(&self) -> &str {
        &self.prefix
    }

    fn critic<'g, T: Scalar>(&self, b: &Binder<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.forward(b, x)
    }
}

#[derive(Clone, Debug)]
pub struct R1 {
    pub value: f64,
    pub grads: BTreeMap<String, Tensor<f64>>,
}

fn owned_by(prefix: &str) -> impl Fn(&str) -> bool + '_ {
    move |name: &str| name.strip_prefix(prefix).is_some_and(|r| r.starts_with('.'))
}

/// Input gradient of the summed logits.
fn input_grad<C: Critic, S: Scalar>(critic: &C, store: &ParamStore, real: &Tensor<S>) -> Result<Tensor<S>> {
    let g = Graph::<S>::new();
    let b = Binder::frozen(&g, store);
    let x = g.leaf(real.clone());
    let s = critic.critic(&b, x)?.sum();
    Ok(g.backward(s).get_or_zeros(x))
}

fn penalty<S: Scalar>(grad: &Tensor<S>, gamma: f64) -> f64 {
    let batch = grad.dim(0).max(1) as f64;
    let sq: f64 = grad.data().iter().map(|v| v.re() * v.re()).sum();
    0.5 * gamma * sq / batch
}

pub fn r1_penalty<C: Critic, S: Scalar>(critic: &C, store: &ParamStore, real: &Tensor<S>, gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(penalty(&input_grad(critic, store, real)?, gamma))
}

/// Penalty value and its exact gradient w.r.t. the critic's parameters.
pub fn r1_penalty_with_grads<C: Critic, S: Scalar>(
    critic: &C,
    store: &ParamStore,
    real: &Tensor<S>,
    gamma: f64,
) -> Result<R1> {
    if gamma == 0.0 {
        return Ok(R1 {
            value: 0.0,
            grads: BTreeMap::new(),
        });
    }
    let gx = input_grad(critic, store, real)?;
    let value = penalty(&gx, gamma);

    let g = Graph::<Dual<S>>::new();
    let b = Binder::new(&g, store, owned_by(critic.prefix()));
    let data = real.data().iter().zip(gx.data()).map(|(&x, &t)| Dual::new(x, t)).collect();
    let x = g.constant(Tensor::new(real.shape(), data));
    let s = critic.critic(&b, x)?.sum();
    let grads = g.backward(s);
    let k = gamma / real.dim(0).max(1) as f64;
    let grads = b
        .gradients(&grads, |d| d.du.re())
        .into_iter()
        .map(|(n, t)| (n, t.map(|v| v * k)))
        .collect();
    Ok(R1 { value, grads })
}
