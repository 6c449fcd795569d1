//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frechet {
    pub distance: f64,
    /// A set had at most `d` samples, so its covariance is rank deficient.
    pub ill_conditioned: bool,
}

fn moments(set: &[Vec<f64>], d: usize, which: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::Metric(format!("feature set {which} needs at least 2 samples")));
    }
    let n = set.len();
    let mut mean = DVector::zeros(d);
    for (k, v) in set.iter().enumerate() {
        if v.len() != d {
            return Err(Error::Metric(format!(
                "feature {k} of set {which} has dimension {}, expected {d}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Metric(format!("feature {k} of set {which} is not finite")));
        }
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(n, d);
    for (k, v) in set.iter().enumerate() {
        for j in 0..d {
            centered[(k, j)] = v[j] - mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from round-off are clamped to zero.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^½)`, with the cross term computed as
/// `tr((Σa^½ Σb Σa^½)^½)`, which stays symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Frechet> {
    let d = a.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::Metric("empty feature set or zero-dimensional features".into()));
    }
    let (mu_a, cov_a) = moments(a, d, "A")?;
    let (mu_b, cov_b) = moments(b, d, "B")?;
    let root_a = sqrt_psd(cov_a.clone());
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(Frechet {
        distance: dist.max(0.0),
        ill_conditioned: a.len() <= d || b.len() <= d,
    })
}
