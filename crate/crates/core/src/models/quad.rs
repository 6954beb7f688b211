//! Six-parameter quadratic model over `{1, lambda, omega, lambda^2,
//! lambda omega, omega^2}`.
//!
//! Motivated by the linear sloshing relation `h = L^2 / 12g (omega^2 + lambda^2)`,
//! which lies exactly in this span.

use nalgebra::{DMatrix, DVector};

use super::{FeatureVector, Regressor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadModel {
    /// Coefficients in basis order `1, lambda, omega, lambda^2, lambda*omega, omega^2`.
    pub coef: [f64; 6],
}

pub fn quad_basis(x: &FeatureVector) -> [f64; 6] {
    let (l, w) = (x.lambda, x.omega);
    [1.0, l, w, l * l, l * w, w * w]
}

impl Regressor for QuadModel {
    fn predict(&self, x: &FeatureVector) -> f64 {
        quad_basis(x).iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }
}

/// Ordinary least squares over the quadratic basis.
pub fn quad_fit(features: &[FeatureVector], targets: &[f64]) -> Result<QuadModel> {
    if features.len() != targets.len() {
        return Err(Error::invalid("features and targets differ in length"));
    }
    if features.len() < 6 {
        return Err(Error::invalid("quadratic model needs at least 6 points"));
    }
    let n = features.len();
    let mut a = DMatrix::from_fn(n, 6, |i, j| quad_basis(&features[i])[j]);
    if a.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    // column equilibration only (no mixing), so coefficients map back exactly
    let scale: Vec<f64> = (0..6)
        .map(|j| {
            let nrm = a.column(j).norm();
            if nrm > 0.0 {
                1.0 / nrm
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..6 {
        a.column_mut(j).scale_mut(scale[j]);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::invalid("rank-deficient quadratic design matrix"));
    }
    let y = DVector::from_column_slice(targets);
    let sol = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::numerical(format!("least squares failed: {e}")))?;
    let mut coef = [0.0; 6];
    for j in 0..6 {
        coef[j] = sol[j] * scale[j];
    }
    Ok(QuadModel { coef })
}
