//! Physics-inspired estimation of liquid height, viscosity and concentration
//! from dynamic tactile signals.
//!
//! A liquid held still in a container after a lateral perturbation sloshes as
//! a damped second-order system. The tactile sensor sees the lateral reaction
//! force, which oscillates with decay rate `lambda = gamma / 2` and frequency
//! `omega = sqrt(12 g h / L^2 - gamma^2 / 4)`. The crate is organised as the
//! processing chain:
//!
//! - [`sim`]: forward simulator of the sloshing mode and synthetic marker
//!   recordings (the ground truth used throughout the tests).
//! - [`signal`]: low-pass filtering, marker selection and PCA down to a
//!   single oscillation signal `u(t)`.
//! - [`fit`]: two-component damped-oscillation fit producing `(lambda, omega)`.
//! - [`models`]: GPR, quadratic and SVM models on the `(lambda, omega)` plane.
//! - [`transfer`]: four-parameter feature warp between similar containers.
//! - [`dataset`]: manifests, benchmark generation, evaluation reports.
//! - [`plot`]: SVG and data-table emission for the standard figures.

pub mod dataset;
pub mod error;
pub mod fit;
pub mod kv;
pub mod models;
pub mod optim;
pub mod plot;
pub mod signal;
pub mod sim;
pub mod transfer;

pub use error::{Error, Result};
