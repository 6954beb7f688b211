//! Cross-container transfer by an affine warp of the feature plane.
//!
//! A model trained on container A is reused on a similarly shaped container
//! B as `y_B(lambda, omega) = y_A(a1 lambda + a2, b1 omega + b2)`; only the
//! four warp parameters are fitted on B's data.

use crate::error::{Error, Result};
use crate::models::{FeatureVector, Model, Regressor};
use crate::optim::{multi_start, NelderMeadConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMap {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub base: Box<Model>,
}

impl TransferMap {
    pub fn identity(base: Model) -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.0,
            beta1: 1.0,
            beta2: 0.0,
            base: Box::new(base),
        }
    }

    pub fn warp(&self, x: &FeatureVector) -> FeatureVector {
        FeatureVector {
            lambda: self.alpha1 * x.lambda + self.alpha2,
            omega: self.beta1 * x.omega + self.beta2,
        }
    }

    /// Mean squared error of the warped model on `data`.
    pub fn mse(&self, data: &[(FeatureVector, f64)]) -> f64 {
        mse_of(&self.base, [self.alpha1, self.alpha2, self.beta1, self.beta2], data)
    }
}

impl Regressor for TransferMap {
    fn predict(&self, x: &FeatureVector) -> f64 {
        self.base.predict(&self.warp(x))
    }
}

fn mse_of(base: &Model, p: [f64; 4], data: &[(FeatureVector, f64)]) -> f64 {
    let sum: f64 = data
        .iter()
        .map(|(x, y)| {
            let w = FeatureVector {
                lambda: p[0] * x.lambda + p[1],
                omega: p[2] * x.omega + p[3],
            };
            (base.predict(&w) - y).powi(2)
        })
        .sum();
    sum / data.len() as f64
}

/// Fits the warp on container-B tuning pairs. The identity map is always a
/// candidate, so the result never fits the tuning set worse than `base` as is.
pub fn transfer_fit(base: &Model, tune: &[(FeatureVector, f64)]) -> Result<TransferMap> {
    if !base.is_regressor() {
        return Err(Error::invalid("transfer base must be a regression model"));
    }
    if tune.len() < 4 {
        return Err(Error::invalid(format!("transfer needs >= 4 tuning pairs, got {}", tune.len())));
    }
    if tune
        .iter()
        .any(|(x, y)| !(y.is_finite() && x.lambda.is_finite() && x.omega.is_finite()))
    {
        return Err(Error::invalid("non-finite tuning data"));
    }

    let n = tune.len() as f64;
    let spread = |f: fn(&FeatureVector) -> f64| {
        let m = tune.iter().map(|(x, _)| f(x)).sum::<f64>() / n;
        let s = (tune.iter().map(|(x, _)| (f(x) - m).powi(2)).sum::<f64>() / n).sqrt();
        s.max(1e-3 * m.abs()).max(1e-6)
    };
    let (sl, sw) = (spread(|x| x.lambda), spread(|x| x.omega));

    // search in (ln a1, a2, ln b1, b2)
    let objective = |th: &[f64]| {
        if th.iter().any(|v| !v.is_finite()) || th[0].abs() > 5.0 || th[2].abs() > 5.0 {
            return f64::INFINITY;
        }
        mse_of(base, [th[0].exp(), th[1], th[2].exp(), th[3]], tune)
    };
    let starts = vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.2, 0.0, 0.2, 0.0],
        vec![-0.2, 0.0, -0.2, 0.0],
        vec![0.0, 0.0, 0.4, 0.0],
    ];
    let step = [0.1, 0.2 * sl, 0.1, 0.2 * sw];
    let nm = NelderMeadConfig {
        max_evals: 3000,
        ftol: 1e-12,
        xtol: 1e-9,
        ..Default::default()
    };
    let (_, best, _) = multi_start(objective, &starts, &step, &nm);

    let identity = TransferMap::identity(base.clone());
    let id_mse = identity.mse(tune);
    if !(best.f < id_mse) {
        return Ok(identity);
    }
    let th = best.x;
    Ok(TransferMap {
        alpha1: th[0].exp(),
        alpha2: th[1],
        beta1: th[2].exp(),
        beta2: th[3],
        base: Box::new(base.clone()),
    })
}

pub fn transfer_predict(map: &TransferMap, x: &FeatureVector) -> f64 {
    map.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadModel;

    fn quad_base() -> Model {
        // h-like surface: 0.001 (omega^2 + lambda^2)
        Model::Quad(QuadModel {
            coef: [0.0, 0.0, 0.0, 1e-3, 0.0, 1e-3],
        })
    }

    #[test]
    fn identity_map_matches_base() {
        let base = quad_base();
        let m = TransferMap::identity(base.clone());
        let x = FeatureVector::new(0.4, 17.0);
        assert_eq!(transfer_predict(&m, &x), base.predict(&x));
    }

    #[test]
    fn shift_only_map() {
        let base = quad_base();
        let m = TransferMap {
            alpha2: 0.3,
            ..TransferMap::identity(base.clone())
        };
        let x = FeatureVector::new(0.4, 17.0);
        assert_eq!(m.predict(&x), base.predict(&FeatureVector::new(0.4 + 0.3, 17.0)));
    }

    #[test]
    fn same_container_recovers_identity() {
        let base = quad_base();
        let tune: Vec<_> = (0..12)
            .map(|i| {
                let x = FeatureVector::new(0.1 + 0.2 * (i % 4) as f64, 13.0 + 0.7 * i as f64);
                (x, base.predict(&x))
            })
            .collect();
        let m = transfer_fit(&base, &tune).unwrap();
        assert!(m.mse(&tune) <= 1e-20, "{}", m.mse(&tune));
        for (x, y) in &tune {
            assert!((m.predict(x) - y).abs() < 1e-8);
        }
    }

    #[test]
    fn recovers_a_frequency_scaling_from_four_points() {
        let base = quad_base();
        let pts = [
            FeatureVector::new(0.1, 10.0),
            FeatureVector::new(1.5, 11.0),
            FeatureVector::new(0.2, 17.0),
            FeatureVector::new(1.2, 15.0),
        ];
        let tune: Vec<_> = pts
            .iter()
            .map(|x| (*x, base.predict(&FeatureVector::new(x.lambda, 1.25 * x.omega))))
            .collect();
        let ys: Vec<f64> = tune.iter().map(|p| p.1).collect();
        let mean = ys.iter().sum::<f64>() / 4.0;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 4.0;
        let m = transfer_fit(&base, &tune).unwrap();
        assert!(m.mse(&tune) < 1e-6 * var, "mse {} var {var}", m.mse(&tune));
    }

    #[test]
    fn never_worse_than_identity() {
        let base = quad_base();
        let tune: Vec<_> = (0..6)
            .map(|i| (FeatureVector::new(0.3, 12.0 + i as f64), if i % 2 == 0 { 5.0 } else { -5.0 }))
            .collect();
        let m = transfer_fit(&base, &tune).unwrap();
        assert!(m.mse(&tune) <= TransferMap::identity(base).mse(&tune));
    }

    #[test]
    fn input_errors() {
        let base = quad_base();
        let few: Vec<_> = (0..3).map(|i| (FeatureVector::new(0.1, 10.0 + i as f64), 1.0)).collect();
        assert!(transfer_fit(&base, &few).is_err());
        let mut bad: Vec<_> = (0..5).map(|i| (FeatureVector::new(0.1, 10.0 + i as f64), 1.0)).collect();
        bad[2].1 = f64::NAN;
        assert!(transfer_fit(&base, &bad).is_err());
    }
}
