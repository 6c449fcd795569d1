//! Adversarial, reconstruction and style losses.
//!
//! Discriminator losses are written as quantities to minimize: the negated
//! log-likelihood objective, with `-log σ(l) = softplus(-l)` and
//! `-log(1 - σ(l)) = softplus(l)` for numerical stability. Generator losses
//! are the non-saturating counterparts with the same term weights.

use regionmix_autograd::{Scalar, Var};

use crate::error::{Error, Result};

/// `-mean log σ(l)`.
fn real_term<'g, T: Scalar>(logits: Var<'g, T>) -> Var<'g, T> {
    logits.neg().softplus().mean()
}

/// `-mean log(1 - σ(l))`.
fn fake_term<'g, T: Scalar>(logits: Var<'g, T>) -> Var<'g, T> {
    logits.softplus().mean()
}

fn weighted_sum<'g, T: Scalar>(terms: &[(f64, Var<'g, T>)]) -> Var<'g, T> {
    let mut it = terms.iter();
    let &(w, first) = it.next().expect("at least one term");
    it.fold(first.scale(w), |acc, &(w, v)| acc.add(v.scale(w)))
}

/// Mask discriminator loss: `-[log D(M) + α log(1-D(G(M'))) + (1-α) log(1-D(G(M'')))]`,
/// each term averaged over its batch and patches. `random = None` drops the
/// random-composition term.
pub fn structure_d_loss<'g, T: Scalar>(
    real: Var<'g, T>,
    known: Var<'g, T>,
    random: Option<Var<'g, T>>,
    alpha: f64,
) -> Var<'g, T> {
    let mut terms = vec![(1.0, real_term(real)), (alpha, fake_term(known))];
    if let Some(r) = random {
        terms.push((1.0 - alpha, fake_term(r)));
    }
    weighted_sum(&terms)
}

/// Non-saturating generator counterpart of [`structure_d_loss`].
pub fn structure_g_loss<'g, T: Scalar>(known: Var<'g, T>, random: Option<Var<'g, T>>, alpha: f64) -> Var<'g, T> {
    let mut terms = vec![(alpha, real_term(known))];
    if let Some(r) = random {
        terms.push((1.0 - alpha, real_term(r)));
    }
    weighted_sum(&terms)
}

/// `(d_loss, g_loss)` for the mask discriminator.
pub fn structure_adversarial_loss<'g, T: Scalar>(
    real: Var<'g, T>,
    known: Var<'g, T>,
    random: Option<Var<'g, T>>,
    alpha: f64,
) -> (Var<'g, T>, Var<'g, T>) {
    (
        structure_d_loss(real, known, random, alpha),
        structure_g_loss(known, random, alpha),
    )
}

/// Image discriminator loss: real term weighted β; the fake block weighted
/// `1-β`, with η on the sum of the known and approximated terms and `1-η` on
/// the random term.
pub fn image_d_loss<'g, T: Scalar>(
    real: Var<'g, T>,
    known: Var<'g, T>,
    approx: Var<'g, T>,
    random: Option<Var<'g, T>>,
    beta: f64,
    eta: f64,
) -> Var<'g, T> {
    let f = 1.0 - beta;
    let mut terms = vec![
        (beta, real_term(real)),
        (f * eta, fake_term(known)),
        (f * eta, fake_term(approx)),
    ];
    if let Some(r) = random {
        terms.push((f * (1.0 - eta), fake_term(r)));
    }
    weighted_sum(&terms)
}

pub fn image_g_loss<'g, T: Scalar>(
    known: Var<'g, T>,
    approx: Var<'g, T>,
    random: Option<Var<'g, T>>,
    beta: f64,
    eta: f64,
) -> Var<'g, T> {
    let f = 1.0 - beta;
    let mut terms = vec![(f * eta, real_term(known)), (f * eta, real_term(approx))];
    if let Some(r) = random {
        terms.push((f * (1.0 - eta), real_term(r)));
    }
    weighted_sum(&terms)
}

pub fn image_adversarial_loss<'g, T: Scalar>(
    real: Var<'g, T>,
    known: Var<'g, T>,
    approx: Var<'g, T>,
    random: Option<Var<'g, T>>,
    beta: f64,
    eta: f64,
) -> (Var<'g, T>, Var<'g, T>) {
    (
        image_d_loss(real, known, approx, random, beta, eta),
        image_g_loss(known, approx, random, beta, eta),
    )
}

fn same_shape<T: Scalar>(what: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// L1 distance between a one-hot mask and a fuzzy composition: summed over
/// channels, averaged over pixels and batch.
pub fn structure_recon_loss<'g, T: Scalar>(target: Var<'g, T>, fuzzy: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("structure reconstruction", &target, &fuzzy)?;
    let s = target.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("structure reconstruction expects [B, C, H, W], got {s:?}")));
    }
    let c = s[1] as f64;
    Ok(target.sub(fuzzy).abs().mean().scale(c))
}

/// `½ (mean |I - known| + mean |I - approx|)`.
pub fn image_recon_loss<'g, T: Scalar>(image: Var<'g, T>, known: Var<'g, T>, approx: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("image reconstruction", &image, &known)?;
    same_shape("image reconstruction", &image, &approx)?;
    Ok(image.sub(known).abs().mean().add(image.sub(approx).abs().mean()).scale(0.5))
}

/// `(1/2N) (‖Δ_x - Δ_approx‖ + ‖Δ_* - Δ_random‖)` with Frobenius norms of the
/// `δ × N` matrices, averaged over the batch. Inputs are `[B, δ, N]`.
pub fn style_loss<'g, T: Scalar>(
    source_known: Var<'g, T>,
    regen_approx: Var<'g, T>,
    random: Option<(Var<'g, T>, Var<'g, T>)>,
) -> Result<Var<'g, T>> {
    same_shape("style loss", &source_known, &regen_approx)?;
    let s = source_known.shape();
    if s.len() != 3 || s[2] == 0 {
        return Err(Error::Shape(format!("style loss expects [B, δ, N], got {s:?}")));
    }
    let (b, n) = (s[0], s[2]);
    let dist = |a: Var<'g, T>, c: Var<'g, T>| a.sub(c).reshape(&[b, s[1] * n]).norm_last().mean();
    let mut total = dist(source_known, regen_approx);
    if let Some((src, regen)) = random {
        same_shape("style loss", &source_known, &src)?;
        same_shape("style loss", &src, &regen)?;
        total = total.add(dist(src, regen));
    }
    Ok(total.scale(1.0 / (2.0 * n as f64)))
}

/// Fails the step when a loss value is not finite.
pub fn ensure_finite(value: f64, step: u64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::TrainingFault {
            step,
            term: format!("{term} ({value})"),
        })
    }
}
