//! Gaussian process regression with an ARD RBF kernel plus a white-noise
//! kernel, hyperparameters by maximum log marginal likelihood.
//!
//! Features and targets are standardised before training; all kernel
//! hyperparameters live in standardised units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureVector, Regressor};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::optim::{multi_start, NelderMeadConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GprConfig {
    pub n_restarts: usize,
    /// Bounds on each RBF length-scale.
    pub length_scale_bounds: (f64, f64),
    pub signal_variance_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for GprConfig {
    fn default() -> Self {
        Self {
            n_restarts: 16,
            length_scale_bounds: (1e-2, 1e2),
            signal_variance_bounds: (1e-3, 1e4),
            noise_variance_bounds: (1e-10, 10.0),
            max_evals: 600,
            seed: 0,
        }
    }
}

impl GprConfig {
    /// Overrides defaults with `n_restarts`, `max_evals` and `seed` from `kv`.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        crate::signal::reject_unknown(kv, &["n_restarts", "max_evals", "seed"])?;
        let d = Self::default();
        let cfg = Self {
            n_restarts: kv.get("n_restarts")?.unwrap_or(d.n_restarts),
            max_evals: kv.get("max_evals")?.unwrap_or(d.max_evals),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            ..d
        };
        if cfg.n_restarts == 0 || cfg.max_evals == 0 {
            return Err(Error::invalid("gpr n_restarts and max_evals must be >= 1"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    /// Standardised training inputs.
    pub(crate) x: Vec<[f64; 2]>,
    /// Raw training targets.
    pub(crate) y: Vec<f64>,
    pub(crate) x_mean: [f64; 2],
    pub(crate) x_std: [f64; 2],
    pub(crate) y_mean: f64,
    pub(crate) y_std: f64,
    pub(crate) length_scales: [f64; 2],
    pub(crate) signal_variance: f64,
    pub(crate) noise_variance: f64,
    /// Diagonal jitter actually needed for the factorisation.
    pub(crate) jitter: f64,
    pub(crate) log_marginal_likelihood: f64,
    /// `(K + noise I)^-1 y_standardised`.
    pub(crate) alpha: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    pub(crate) chol: Vec<f64>,
}

fn standardize(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn rbf(a: &[f64; 2], b: &[f64; 2], ls: &[f64; 2], sf2: f64) -> f64 {
    let d0 = (a[0] - b[0]) / ls[0];
    let d1 = (a[1] - b[1]) / ls[1];
    sf2 * (-0.5 * (d0 * d0 + d1 * d1)).exp()
}

fn gram(x: &[[f64; 2]], ls: &[f64; 2], sf2: f64, diag: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        rbf(&x[i], &x[j], ls, sf2) + if i == j { diag } else { 0.0 }
    })
}

/// Cholesky with jitter escalation from 1e-10 up to 1e-4.
fn factor(k: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = k.clone().cholesky() {
        return Some((c, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-4 * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

struct Lml<'a> {
    x: &'a [[f64; 2]],
    y: &'a DVector<f64>,
}

impl Lml<'_> {
    /// Log marginal likelihood for `theta = [ln l0, ln l1, ln sf2, ln sn2]`.
    fn eval(&self, theta: &[f64]) -> Option<f64> {
        let ls = [theta[0].exp(), theta[1].exp()];
        let k = gram(self.x, &ls, theta[2].exp(), theta[3].exp());
        let (ch, _) = factor(&k)?;
        let alpha = ch.solve(self.y);
        let l = ch.l_dirty();
        let logdet: f64 = (0..self.x.len()).map(|i| l[(i, i)].ln()).sum();
        let v = -0.5 * self.y.dot(&alpha) - logdet - 0.5 * self.x.len() as f64 * LN_2PI;
        v.is_finite().then_some(v)
    }
}

/// Trains a GPR on `features -> targets`.
pub fn gpr_train(features: &[FeatureVector], targets: &[f64]) -> Result<GprModel> {
    gpr_train_with(features, targets, &GprConfig::default())
}

pub fn gpr_train_with(features: &[FeatureVector], targets: &[f64], cfg: &GprConfig) -> Result<GprModel> {
    if features.len() != targets.len() {
        return Err(Error::invalid("features and targets differ in length"));
    }
    if features
        .iter()
        .any(|f| !(f.lambda.is_finite() && f.omega.is_finite()))
        || targets.iter().any(|t| !t.is_finite())
    {
        return Err(Error::invalid("non-finite training data"));
    }
    let distinct = features
        .iter()
        .any(|f| f.lambda != features[0].lambda || f.omega != features[0].omega);
    if features.len() < 2 || !distinct {
        return Err(Error::invalid("GPR needs at least 2 distinct training points"));
    }
    if cfg.n_restarts == 0 {
        return Err(Error::invalid("n_restarts must be >= 1"));
    }

    let lam: Vec<f64> = features.iter().map(|f| f.lambda).collect();
    let om: Vec<f64> = features.iter().map(|f| f.omega).collect();
    let (m0, s0) = standardize(&lam);
    let (m1, s1) = standardize(&om);
    let (y_mean, y_std) = standardize(targets);
    let x: Vec<[f64; 2]> = features
        .iter()
        .map(|f| [(f.lambda - m0) / s0, (f.omega - m1) / s1])
        .collect();
    let ys = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - y_mean) / y_std));

    let (ll, lh) = (cfg.length_scale_bounds.0.ln(), cfg.length_scale_bounds.1.ln());
    let (sl, sh) = (cfg.signal_variance_bounds.0.ln(), cfg.signal_variance_bounds.1.ln());
    let (nl, nh) = (cfg.noise_variance_bounds.0.ln(), cfg.noise_variance_bounds.1.ln());
    let lo = [ll, ll, sl, nl];
    let hi = [lh, lh, sh, nh];

    let lml = Lml { x: &x, y: &ys };
    let objective = |th: &[f64]| {
        if th.iter().zip(lo.iter().zip(&hi)).any(|(v, (a, b))| v < a || v > b) {
            return f64::INFINITY;
        }
        lml.eval(th).map_or(f64::INFINITY, |v| -v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![vec![0.0, 0.0, 0.0, (1e-2f64).ln().clamp(nl, nh)]];
    while starts.len() < cfg.n_restarts {
        starts.push((0..4).map(|i| rng.random_range(lo[i]..hi[i])).collect());
    }
    let nm = NelderMeadConfig {
        max_evals: cfg.max_evals,
        ftol: 1e-9,
        xtol: 1e-6,
        ..Default::default()
    };
    let (_, best, _) = multi_start(objective, &starts, &[0.5, 0.5, 0.5, 1.0], &nm);
    if !best.f.is_finite() {
        return Err(Error::numerical("kernel matrix singular for every hyperparameter start"));
    }
    let th = best.x;
    let length_scales = [th[0].exp(), th[1].exp()];
    let signal_variance = th[2].exp();
    let noise_variance = th[3].exp();
    let k = gram(&x, &length_scales, signal_variance, noise_variance);
    let (ch, jitter) =
        factor(&k).ok_or_else(|| Error::numerical("singular kernel after jitter escalation"))?;
    let alpha = ch.solve(&ys);
    let n = x.len();
    let l = ch.l();
    let chol: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();

    Ok(GprModel {
        x,
        y: targets.to_vec(),
        x_mean: [m0, m1],
        x_std: [s0, s1],
        y_mean,
        y_std,
        length_scales,
        signal_variance,
        noise_variance,
        jitter,
        log_marginal_likelihood: -best.f,
        alpha: alpha.iter().copied().collect(),
        chol,
    })
}

impl GprModel {
    fn standardize_input(&self, x: &FeatureVector) -> [f64; 2] {
        [
            (x.lambda - self.x_mean[0]) / self.x_std[0],
            (x.omega - self.x_mean[1]) / self.x_std[1],
        ]
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Posterior mean and standard deviation of a noisy observation at `x`.
    pub fn predict_with_std(&self, x: &FeatureVector) -> (f64, f64) {
        let xs = self.standardize_input(x);
        let n = self.n();
        let kstar: Vec<f64> = self
            .x
            .iter()
            .map(|xi| rbf(xi, &xs, &self.length_scales, self.signal_variance))
            .collect();
        let mean_s: f64 = kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        // forward substitution L v = k*
        let mut v = vec![0.0; n];
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
            v[i] = (kstar[i] - s) / self.chol[i * n + i];
        }
        let explained: f64 = v.iter().map(|a| a * a).sum();
        let latent = (self.signal_variance - explained).max(0.0);
        let var_s = latent + self.noise_variance;
        (self.y_mean + self.y_std * mean_s, self.y_std * var_s.sqrt())
    }

    /// Learned white-noise standard deviation in target units.
    pub fn noise_std(&self) -> f64 {
        self.y_std * self.noise_variance.sqrt()
    }

    /// Prior standard deviation (signal plus noise) in target units.
    pub fn prior_std(&self) -> f64 {
        self.y_std * (self.signal_variance + self.noise_variance).sqrt()
    }

    /// Prior mean in target units (the training target mean).
    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    /// Length-scales in standardised feature units.
    pub fn length_scales(&self) -> [f64; 2] {
        self.length_scales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn n_train(&self) -> usize {
        self.n()
    }

    /// Kernel (RBF plus white noise on the diagonal) Gram matrix over raw features.
    pub fn gram_matrix(&self, points: &[FeatureVector]) -> DMatrix<f64> {
        let xs: Vec<[f64; 2]> = points.iter().map(|p| self.standardize_input(p)).collect();
        gram(&xs, &self.length_scales, self.signal_variance, self.noise_variance)
    }
}

impl Regressor for GprModel {
    fn predict(&self, x: &FeatureVector) -> f64 {
        self.predict_with_std(x).0
    }
}

/// Posterior mean and standard deviation at `x`.
pub fn gpr_predict(model: &GprModel, x: &FeatureVector) -> (f64, f64) {
    model.predict_with_std(x)
}
