//! Regressors and classifiers on the `(lambda, omega)` feature plane.

mod container;
pub mod gpr;
pub mod quad;
pub mod svm;

pub use container::{load_model, save_model, MAGIC};
pub use gpr::{gpr_predict, gpr_train, gpr_train_with, GprConfig, GprModel};
pub use quad::{quad_fit, QuadModel};
pub use svm::{svm_predict, svm_train, svm_train_with, SvmConfig, SvmModel};

use crate::error::{Error, Result};
use crate::transfer::TransferMap;

/// The physics features extracted by the oscillation fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    /// Decay rate (1/s).
    pub lambda: f64,
    /// Angular frequency (rad/s).
    pub omega: f64,
}

impl FeatureVector {
    pub fn new(lambda: f64, omega: f64) -> Self {
        Self { lambda, omega }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lambda, self.omega]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_finite() && self.omega.is_finite() && self.omega > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid feature vector {self:?}")))
        }
    }
}

/// Ground-truth properties of a recording; any field may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LiquidLabel {
    /// Liquid height (mm).
    pub h: Option<f64>,
    /// Sugar concentration (wt%).
    pub c: Option<f64>,
    /// log10 of kinematic viscosity in cSt.
    pub mu: Option<f64>,
    pub class_id: Option<u32>,
}

/// Regression targets a model can be trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Height,
    Concentration,
    LogViscosity,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Height, Target::Concentration, Target::LogViscosity];

    pub fn name(self) -> &'static str {
        match self {
            Target::Height => "h",
            Target::Concentration => "c",
            Target::LogViscosity => "mu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(Target::Height),
            "c" => Ok(Target::Concentration),
            "mu" => Ok(Target::LogViscosity),
            _ => Err(Error::invalid(format!("unknown target {s:?} (expected h, c or mu)"))),
        }
    }

    pub fn get(self, label: &LiquidLabel) -> Option<f64> {
        match self {
            Target::Height => label.h,
            Target::Concentration => label.c,
            Target::LogViscosity => label.mu,
        }
    }
}

/// `log10` of a kinematic viscosity in centistokes.
pub fn viscosity_to_mu(nu_cst: f64) -> Result<f64> {
    if nu_cst.is_finite() && nu_cst > 0.0 {
        Ok(nu_cst.log10())
    } else {
        Err(Error::invalid(format!("viscosity must be > 0, got {nu_cst}")))
    }
}

/// Anything that maps a feature vector to a scalar estimate.
pub trait Regressor {
    fn predict(&self, x: &FeatureVector) -> f64;
}

/// Any trained model the crate can store.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gpr(GprModel),
    Quad(QuadModel),
    Svm(SvmModel),
    Xfer(TransferMap),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Gpr(_) => "gpr",
            Model::Quad(_) => "quad",
            Model::Svm(_) => "svm",
            Model::Xfer(_) => "xfer",
        }
    }

    /// Scalar prediction; classifiers are rejected.
    pub fn predict_value(&self, x: &FeatureVector) -> Result<f64> {
        match self {
            Model::Gpr(m) => Ok(m.predict(x)),
            Model::Quad(m) => Ok(m.predict(x)),
            Model::Xfer(m) => Ok(m.predict(x)),
            Model::Svm(_) => Err(Error::invalid("svm is a classifier, not a regressor")),
        }
    }

    pub fn is_regressor(&self) -> bool {
        !matches!(self, Model::Svm(_))
    }
}

impl Regressor for Model {
    /// Panics for classifiers; check [`Model::is_regressor`] first.
    fn predict(&self, x: &FeatureVector) -> f64 {
        self.predict_value(x).expect("regressor model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn viscosity_log_scale() {
        assert!((viscosity_to_mu(1.1).unwrap() - 0.0414).abs() < 5e-5);
        assert!((viscosity_to_mu(64.0).unwrap() - 1.806).abs() < 5e-4);
        assert!((viscosity_to_mu(64.0).unwrap() - 1.81).abs() < 5e-3);
        assert_eq!(viscosity_to_mu(1.0).unwrap(), 0.0);
        assert!(viscosity_to_mu(0.0).is_err());
        assert!(viscosity_to_mu(-3.0).is_err());
    }

    #[test]
    fn target_names_round_trip() {
        for t in Target::ALL {
            assert_eq!(Target::parse(t.name()).unwrap(), t);
        }
        assert!(Target::parse("x").is_err());
    }
}
