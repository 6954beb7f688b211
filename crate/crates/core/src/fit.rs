//! Damped-oscillation fit of the principal signal.
//!
//! The signal is modelled as a slow damped oscillation `f`, a faster decaying
//! one `g` that absorbs the high-energy start of the recording, and a
//! quadratic slip drift `l`:
//!
//! ```text
//! u(t) = B  exp(-lambda  t) cos(omega  t + psi)
//!      + B' exp(-lambda' t) cos(omega' t + psi')
//!      + c2 t^2 + c1 t + c0,                      lambda' > lambda
//! ```
//!
//! Fitting minimises the relative-error loss
//! `sum_t (u - u_hat)^2 / (u^2 + delta)`, which weighs the quiet tail (where
//! `f` dominates) more than the start. Only `(lambda, omega)` leave this module
//! as features.
//!
//! The amplitudes, phases and drift enter the model linearly, so for fixed
//! decay rates and frequencies they are obtained exactly by weighted linear
//! least squares. Nelder-Mead therefore only searches the nonlinear
//! coordinates `(lambda, omega, ln(lambda' - lambda), omega')`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::kv::{KvMap, KvWriter};
use crate::models::FeatureVector;
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::signal::PrincipalSignal;

/// Full parameter set of the oscillation model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitParams {
    pub b: f64,
    pub lambda: f64,
    pub omega: f64,
    pub psi: f64,
    pub b_p: f64,
    pub lambda_p: f64,
    pub omega_p: f64,
    pub psi_p: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl FitParams {
    #[inline]
    pub fn eval_at(&self, t: f64) -> f64 {
        self.b * (-self.lambda * t).exp() * (self.omega * t + self.psi).cos()
            + self.b_p * (-self.lambda_p * t).exp() * (self.omega_p * t + self.psi_p).cos()
            + (self.c2 * t + self.c1) * t
            + self.c0
    }

    /// Re-expresses parameters fitted on `tau = t - t0` in terms of `t`.
    fn shift_origin(self, t0: f64) -> Self {
        if t0 == 0.0 {
            return self;
        }
        Self {
            b: self.b * (self.lambda * t0).exp(),
            psi: wrap_phase(self.psi - self.omega * t0),
            b_p: self.b_p * (self.lambda_p * t0).exp(),
            psi_p: wrap_phase(self.psi_p - self.omega_p * t0),
            c2: self.c2,
            c1: self.c1 - 2.0 * self.c2 * t0,
            c0: self.c0 - self.c1 * t0 + self.c2 * t0 * t0,
            ..self
        }
    }

    /// Puts the slower-decaying component in the `f` slot.
    pub fn ordered(self) -> Self {
        if self.lambda_p >= self.lambda {
            return self;
        }
        Self {
            b: self.b_p,
            lambda: self.lambda_p,
            omega: self.omega_p,
            psi: self.psi_p,
            b_p: self.b,
            lambda_p: self.lambda,
            omega_p: self.omega,
            psi_p: self.psi,
            ..self
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            lambda: self.lambda,
            omega: self.omega,
        }
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Evaluates the model at every time in `t`.
pub fn model_eval(params: &FitParams, t: &[f64]) -> Vec<f64> {
    t.iter().map(|&ti| params.eval_at(ti)).collect()
}

/// Which components the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitModel {
    /// `f + g + l`, the full model.
    #[default]
    TwoComponent,
    /// `f + l` only; `g` is pinned to zero amplitude.
    SingleComponent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Loss stabiliser relative to `mean(u^2)`.
    pub delta: f64,
    pub n_restarts: usize,
    /// Nelder-Mead evaluation budget per restart.
    pub max_iters: usize,
    /// Relative loss spread across the simplex at which a restart stops.
    pub tol: f64,
    pub seed: u64,
    pub model: FitModel,
    /// Samples before this time are ignored.
    pub window_start: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            n_restarts: 8,
            max_iters: 4000,
            tol: 1e-9,
            seed: 0,
            model: FitModel::TwoComponent,
            window_start: 0.0,
        }
    }
}

impl FitConfig {
    /// Overrides defaults with the keys present in `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        crate::signal::reject_unknown(
            kv,
            &["delta", "n_restarts", "max_iters", "tol", "seed", "model", "window_start"],
        )?;
        let d = Self::default();
        let model = match kv.get_str("model") {
            None | Some("two") => FitModel::TwoComponent,
            Some("single") => FitModel::SingleComponent,
            Some(other) => return Err(Error::invalid(format!("fit model must be two or single, got {other:?}"))),
        };
        let cfg = Self {
            delta: kv.get("delta")?.unwrap_or(d.delta),
            n_restarts: kv.get("n_restarts")?.unwrap_or(d.n_restarts),
            max_iters: kv.get("max_iters")?.unwrap_or(d.max_iters),
            tol: kv.get("tol")?.unwrap_or(d.tol),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            model,
            window_start: kv.get("window_start")?.unwrap_or(d.window_start),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::invalid("delta must be > 0"));
        }
        if self.n_restarts == 0 || self.max_iters == 0 {
            return Err(Error::invalid("n_restarts and max_iters must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if !self.window_start.is_finite() {
            return Err(Error::invalid("window_start must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FitParams,
    pub loss: f64,
    pub features: FeatureVector,
    pub converged: bool,
    pub n_restarts_used: usize,
}

impl FitResult {
    pub fn to_kv(&self) -> KvWriter {
        let p = &self.params;
        let mut w = KvWriter::new();
        w.put("lambda", p.lambda)
            .put("omega", p.omega)
            .put("lambda_p", p.lambda_p)
            .put("omega_p", p.omega_p)
            .put("B", p.b)
            .put("B_p", p.b_p)
            .put("psi", p.psi)
            .put("psi_p", p.psi_p)
            .put("c2", p.c2)
            .put("c1", p.c1)
            .put("c0", p.c0)
            .put("loss", self.loss)
            .put("converged", self.converged);
        w
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let params = FitParams {
            b: kv.require("B")?,
            lambda: kv.require("lambda")?,
            omega: kv.require("omega")?,
            psi: kv.require("psi")?,
            b_p: kv.require("B_p")?,
            lambda_p: kv.require("lambda_p")?,
            omega_p: kv.require("omega_p")?,
            psi_p: kv.require("psi_p")?,
            c2: kv.require("c2")?,
            c1: kv.require("c1")?,
            c0: kv.require("c0")?,
        };
        Ok(Self {
            params,
            loss: kv.require("loss")?,
            features: params.features(),
            converged: kv.require("converged")?,
            n_restarts_used: kv.get("n_restarts_used")?.unwrap_or(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvMap::read(path)?)
    }
}

/// The samples of `signal` at or after `window_start`.
fn window(signal: &PrincipalSignal, window_start: f64) -> (&[f64], &[f64]) {
    let i0 = signal.t.partition_point(|&t| t < window_start);
    (&signal.t[i0..], &signal.u[i0..])
}

fn delta_abs(u: &[f64], rel: f64) -> f64 {
    rel * u.iter().map(|v| v * v).sum::<f64>() / u.len().max(1) as f64
}

/// The tail-weighted loss of `params` on `signal` (restricted to the window
/// in `cfg`).
pub fn loss_eval(params: &FitParams, signal: &PrincipalSignal, cfg: &FitConfig) -> f64 {
    let (t, u) = window(signal, cfg.window_start);
    let delta = delta_abs(u, cfg.delta);
    t.iter()
        .zip(u)
        .map(|(&ti, &ui)| {
            let r = ui - params.eval_at(ti);
            r * r / (ui * ui + delta)
        })
        .sum()
}

/// Nonlinear search coordinates, with `lambda' = lambda + exp(s)`.
#[derive(Debug, Clone, Copy)]
struct Nonlinear {
    lambda: f64,
    omega: f64,
    s: f64,
    omega_p: f64,
}

struct Problem<'a> {
    tau: Vec<f64>,
    u: &'a [f64],
    w: Vec<f64>,
    model: FitModel,
    omega_lo: f64,
    omega_hi: f64,
    lambda_hi: f64,
    /// Sample spacing when the grid is uniform.
    step: Option<f64>,
}

const S_LO: f64 = -7.0;
const S_HI: f64 = 5.0;

impl<'a> Problem<'a> {
    fn n_linear(&self) -> usize {
        match self.model {
            FitModel::TwoComponent => 7,
            FitModel::SingleComponent => 5,
        }
    }

    fn unpack(&self, x: &[f64]) -> Nonlinear {
        match self.model {
            FitModel::TwoComponent => Nonlinear {
                lambda: x[0],
                omega: x[1],
                s: x[2],
                omega_p: x[3],
            },
            FitModel::SingleComponent => Nonlinear {
                lambda: x[0],
                omega: x[1],
                s: 0.0,
                omega_p: x[1],
            },
        }
    }

    fn feasible(&self, p: &Nonlinear) -> bool {
        let in_band = |w: f64| w >= self.omega_lo && w <= self.omega_hi;
        p.lambda >= 0.0
            && p.lambda <= self.lambda_hi
            && in_band(p.omega)
            && (self.model == FitModel::SingleComponent
                || (in_band(p.omega_p) && (S_LO..=S_HI).contains(&p.s)))
    }

    /// Design rows for every sample. On a uniform grid the damped sinusoids
    /// are advanced by complex multiplication instead of per-sample
    /// transcendentals.
    fn basis(&self, p: &Nonlinear) -> Vec<[f64; 7]> {
        let n = self.tau.len();
        let two = self.model == FitModel::TwoComponent;
        let lambda_p = p.lambda + p.s.exp();
        let mut rows = vec![[0.0; 7]; n];
        let k = if two { 4 } else { 2 };
        if let Some(dt) = self.step {
            let damped = |lambda: f64, omega: f64| {
                let e = (-lambda * dt).exp();
                let (s, c) = (omega * dt).sin_cos();
                (e * c, e * s)
            };
            let (rc, rs) = damped(p.lambda, p.omega);
            let (qc, qs) = damped(lambda_p, p.omega_p);
            let (mut c1, mut s1, mut c2, mut s2) = (1.0, 0.0, 1.0, 0.0);
            for (i, row) in rows.iter_mut().enumerate() {
                // re-anchor periodically so rounding cannot accumulate
                if i % 64 == 0 && i > 0 {
                    let tau = self.tau[i];
                    let e = (-p.lambda * tau).exp();
                    let (s, c) = (p.omega * tau).sin_cos();
                    (c1, s1) = (e * c, e * s);
                    let e = (-lambda_p * tau).exp();
                    let (s, c) = (p.omega_p * tau).sin_cos();
                    (c2, s2) = (e * c, e * s);
                }
                row[0] = c1;
                row[1] = s1;
                if two {
                    row[2] = c2;
                    row[3] = s2;
                }
                (c1, s1) = (c1 * rc - s1 * rs, s1 * rc + c1 * rs);
                (c2, s2) = (c2 * qc - s2 * qs, s2 * qc + c2 * qs);
            }
        } else {
            for (row, &tau) in rows.iter_mut().zip(&self.tau) {
                let e = (-p.lambda * tau).exp();
                let (s, c) = (p.omega * tau).sin_cos();
                row[0] = e * c;
                row[1] = e * s;
                if two {
                    let e = (-lambda_p * tau).exp();
                    let (s, c) = (p.omega_p * tau).sin_cos();
                    row[2] = e * c;
                    row[3] = e * s;
                }
            }
        }
        for (row, &tau) in rows.iter_mut().zip(&self.tau) {
            row[k] = tau * tau;
            row[k + 1] = tau;
            row[k + 2] = 1.0;
        }
        rows
    }

    /// Solves the weighted linear sub-problem; returns coefficients and loss.
    fn solve(&self, p: &Nonlinear) -> Option<(Vec<f64>, f64)> {
        let m = self.n_linear();
        let rows = self.basis(p);
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for ((r, &wi), &ui) in rows.iter().zip(&self.w).zip(self.u) {
            let wi2 = wi * wi;
            for a in 0..m {
                let ra = r[a] * wi2;
                rhs[a] += ra * ui;
                for b in 0..=a {
                    gram[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        // symmetric diagonal scaling keeps the solve well conditioned
        let d: Vec<f64> = (0..m)
            .map(|a| {
                let g = gram[(a, a)];
                if g > 0.0 {
                    1.0 / g.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        for a in 0..m {
            rhs[a] *= d[a];
            for b in 0..m {
                gram[(a, b)] *= d[a] * d[b];
            }
        }
        let scaled = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.svd(true, true).solve(&rhs, 1e-13).ok()?,
        };
        let coef: Vec<f64> = (0..m).map(|a| scaled[a] * d[a]).collect();
        if coef.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let loss = rows
            .iter()
            .zip(&self.w)
            .zip(self.u)
            .map(|((r, &wi), &ui)| {
                let fit: f64 = r[..m].iter().zip(&coef).map(|(x, c)| x * c).sum();
                let e = (ui - fit) * wi;
                e * e
            })
            .sum();
        Some((coef, loss))
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let p = self.unpack(x);
        if !self.feasible(&p) {
            return f64::INFINITY;
        }
        self.solve(&p).map_or(f64::INFINITY, |(_, l)| l)
    }

    fn params(&self, p: &Nonlinear, coef: &[f64]) -> FitParams {
        let amp_phase = |a_c: f64, a_s: f64| (a_c.hypot(a_s), (-a_s).atan2(a_c));
        let (b, psi) = amp_phase(coef[0], coef[1]);
        let mut out = FitParams {
            b,
            lambda: p.lambda,
            omega: p.omega,
            psi,
            ..Default::default()
        };
        let k = match self.model {
            FitModel::TwoComponent => {
                let (bp, psip) = amp_phase(coef[2], coef[3]);
                out.b_p = bp;
                out.psi_p = psip;
                out.lambda_p = p.lambda + p.s.exp();
                out.omega_p = p.omega_p;
                4
            }
            FitModel::SingleComponent => {
                // zero-amplitude placeholder that still honours lambda' > lambda
                out.lambda_p = p.lambda + 1.0;
                out.omega_p = p.omega;
                2
            }
        };
        out.c2 = coef[k];
        out.c1 = coef[k + 1];
        out.c0 = coef[k + 2];
        out
    }
}

/// Angular frequency of the largest spectral peak of `x` (mean and linear
/// trend removed), via zero-padded FFT with parabolic peak interpolation.
pub fn fft_peak_omega(x: &[f64], sample_rate: f64) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let tm = (n - 1) as f64 / 2.0;
    let mean = x.iter().sum::<f64>() / n as f64;
    let sxx: f64 = (0..n).map(|i| (i as f64 - tm).powi(2)).sum();
    let slope = x
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 - tm) * (v - mean))
        .sum::<f64>()
        / sxx;
    let nfft = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..nfft)
        .map(|i| {
            let v = if i < n {
                x[i] - mean - slope * (i as f64 - tm)
            } else {
                0.0
            };
            Complex::new(v, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2].iter().map(|c| c.norm()).collect();
    // skip the lowest bins, which hold residual drift
    let lo = (2 * nfft / n).max(1);
    let k = (lo..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b]))?;
    if mag[k] == 0.0 {
        return None;
    }
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let den = a - 2.0 * b + c;
    let off = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Some(2.0 * PI * (k as f64 + off.clamp(-0.5, 0.5)) * sample_rate / nfft as f64)
}

/// Decay rate from the least-squares slope of log peak magnitudes.
pub fn envelope_decay(t: &[f64], x: &[f64]) -> Option<(f64, f64)> {
    let mut pts = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        let a = x[i].abs();
        if a > 0.0 && a >= x[i - 1].abs() && a > x[i + 1].abs() {
            pts.push((t[i], a.ln()));
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((-slope, my - slope * mt))
}

/// Heavy moving-average smoothing followed by a quadratic least-squares fit;
/// the drift estimate removed before reading the envelope.
fn drift_estimate(tau: &[f64], u: &[f64], window: usize) -> Vec<f64> {
    let n = u.len();
    let half = window / 2;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(half), (i + half + 1).min(n));
            u[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect();
    let x = DMatrix::from_fn(n, 3, |i, j| tau[i].powi(2 - j as i32));
    let y = DVector::from_column_slice(&smooth);
    match x.clone().svd(true, true).solve(&y, 1e-12) {
        Ok(c) => tau.iter().map(|&t| (c[0] * t + c[1]) * t + c[2]).collect(),
        Err(_) => vec![0.0; n],
    }
}

fn uniform_step(tau: &[f64]) -> Option<f64> {
    let n = tau.len();
    let dt = tau[n - 1] / (n - 1) as f64;
    let uniform = dt > 0.0
        && tau
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - i as f64 * dt).abs() <= 1e-9 * tau[n - 1]);
    uniform.then_some(dt)
}

/// Mean power of the tail component `f`, relative to the residual variance,
/// below which `f` is taken to be fitting noise or residual structure.
const TAIL_SIGNIFICANCE: f64 = 10.0;

/// Fits the oscillation model to `signal`.
///
/// With the two-component model, a tail component that only explains noise
/// (the oscillation died out early in the window) is dropped and the signal is
/// refitted with a single component.
pub fn fit(signal: &PrincipalSignal, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (t, u) = window(signal, cfg.window_start);
    let full = fit_window(t, u, signal.sample_rate, cfg)?;
    if cfg.model == FitModel::SingleComponent {
        return Ok(full);
    }
    let (energy, noise) = tail_energy(&full.params, t, u);
    if energy > TAIL_SIGNIFICANCE * noise {
        return Ok(full);
    }
    let single = FitConfig {
        model: FitModel::SingleComponent,
        ..cfg.clone()
    };
    fit_window(t, u, signal.sample_rate, &single)
}

/// Mean power of the `f` component over the window and the mean squared residual.
fn tail_energy(params: &FitParams, t: &[f64], u: &[f64]) -> (f64, f64) {
    let p = params;
    let mut energy = 0.0;
    let mut resid = 0.0;
    for (&ti, &ui) in t.iter().zip(u) {
        let f = p.b * (-p.lambda * ti).exp() * (p.omega * ti + p.psi).cos();
        energy += f * f;
        let r = ui - p.eval_at(ti);
        resid += r * r;
    }
    let n = t.len() as f64;
    (energy / n, resid / n)
}

fn fit_window(t: &[f64], u: &[f64], fs: f64, cfg: &FitConfig) -> Result<FitResult> {
    if t.len() < 12 {
        return Err(Error::invalid("fit window holds fewer than 12 samples"));
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let spread = u.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = u.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(spread > 1e-12 * scale) || spread == 0.0 {
        return Err(Error::invalid("degenerate flat signal"));
    }

    let t0 = t[0];
    let tau: Vec<f64> = t.iter().map(|&ti| ti - t0).collect();
    let span = tau[tau.len() - 1];

    // Two seeds: one read from the last two-thirds of the window (where the
    // slow tail dominates) and one from the whole window, for signals that
    // die out early and leave only noise in the tail.
    let tail = tau.len() / 3;
    let omega_full = fft_peak_omega(u, fs).ok_or_else(|| Error::invalid("no oscillation found in signal"))?;
    let omega_tail = fft_peak_omega(&u[tail..], fs).unwrap_or(omega_full);
    let smooth_len = ((fs * 2.0 * PI / omega_full).round() as usize).max(3);
    let drift = drift_estimate(&tau, u, smooth_len);
    let detrended: Vec<f64> = u.iter().zip(&drift).map(|(a, b)| a - b).collect();
    let clamp_decay = |l: Option<(f64, f64)>| {
        l.map(|(l, _)| l)
            .filter(|l| l.is_finite())
            .unwrap_or(0.5)
            .clamp(0.02, 20.0)
    };
    let lambda_tail = clamp_decay(envelope_decay(&tau[tail..], &detrended[tail..]));
    let peak = detrended.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let strong: Vec<f64> = detrended
        .iter()
        .map(|&v| if v.abs() >= 0.05 * peak { v } else { 0.0 })
        .collect();
    let lambda_full = clamp_decay(envelope_decay(&tau, &strong));
    let seeds = [(lambda_tail, omega_tail), (lambda_full, omega_full)];

    let nyquist = PI * fs;
    let delta = delta_abs(u, cfg.delta);
    let step = uniform_step(&tau);
    let problem = Problem {
        tau,
        u,
        w: u.iter().map(|v| 1.0 / (v * v + delta).sqrt()).collect(),
        model: cfg.model,
        omega_lo: (0.25 * omega_tail.min(omega_full)).max(2.0 * PI / span),
        omega_hi: (4.0 * omega_tail.max(omega_full)).min(nyquist),
        lambda_hi: 10.0 * fs,
        step,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::with_capacity(cfg.n_restarts);
    let mut steps = Vec::with_capacity(cfg.n_restarts);
    for r in 0..cfg.n_restarts {
        let (lambda0, omega0) = seeds[r % 2];
        let (jl, jw, js, jp) = if r < 2 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            (
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.05..0.05),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.15..0.15),
            )
        };
        let s0 = (3.0 * lambda0).max(0.3).ln();
        let lambda = lambda0 * f64::exp(jl);
        let omega = omega0 * (1.0 + jw);
        let (x0, step) = match cfg.model {
            FitModel::TwoComponent => (
                vec![lambda, omega, s0 + js, omega0 * (1.0 + jp)],
                vec![0.2 * lambda0.max(0.05), 0.02 * omega0, 0.5, 0.05 * omega0],
            ),
            FitModel::SingleComponent => (vec![lambda, omega], vec![0.2 * lambda0.max(0.05), 0.02 * omega0]),
        };
        starts.push(x0);
        steps.push(step);
    }
    // the loss of the zero model sets the scale below which spreads are noise
    let zero_loss: f64 = problem.u.iter().zip(&problem.w).map(|(u, w)| (u * w).powi(2)).sum();
    let nm = NelderMeadConfig {
        max_evals: cfg.max_iters,
        ftol: cfg.tol,
        fatol: 1e-14 * zero_loss,
        xtol: 1e-6,
    };
    let runs: Vec<_> = starts
        .par_iter()
        .zip(&steps)
        .map(|(x0, step)| nelder_mead(|x| problem.objective(x), x0, step, &nm))
        .collect();
    let best = runs
        .iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one restart")
        .clone();
    if !best.f.is_finite() {
        return Err(Error::numerical("no restart produced a finite loss"));
    }
    let p = problem.unpack(&best.x);
    let (coef, loss) = problem
        .solve(&p)
        .ok_or_else(|| Error::numerical("linear sub-problem became singular"))?;
    let params = problem.params(&p, &coef).shift_origin(t0);

    Ok(FitResult {
        features: params.features(),
        params,
        loss,
        converged: best.converged,
        n_restarts_used: cfg.n_restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(params: &FitParams, fs: f64, dur: f64) -> PrincipalSignal {
        let t: Vec<f64> = (0..(fs * dur) as usize).map(|k| k as f64 / fs).collect();
        let u = model_eval(params, &t);
        PrincipalSignal::from_samples(fs, t, u).unwrap()
    }

    #[test]
    fn constant_and_pure_cosine() {
        let c = FitParams {
            c0: 1.0,
            ..Default::default()
        };
        assert!(model_eval(&c, &[0.0, 1.5, 7.0]).iter().all(|&v| v == 1.0));
        let cosp = FitParams {
            b: 1.0,
            omega: 2.0 * PI,
            ..Default::default()
        };
        for t in [0.0, 0.1, 0.25, 0.8, 3.3] {
            assert!((cosp.eval_at(t) - (2.0 * PI * t).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_model_has_zero_loss_and_delta_monotone() {
        let p = FitParams {
            b: 1.0,
            lambda: 0.5,
            omega: 18.79,
            c0: 0.01,
            ..Default::default()
        };
        let s = signal(&p, 30.0, 10.0);
        assert_eq!(loss_eval(&p, &s, &FitConfig::default()), 0.0);
        let off = FitParams { c0: 0.05, ..p };
        let mut prev = f64::INFINITY;
        for d in [1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3] {
            let l = loss_eval(
                &off,
                &s,
                &FitConfig {
                    delta: d,
                    ..Default::default()
                },
            );
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn shift_origin_preserves_values() {
        let p = FitParams {
            b: 0.7,
            lambda: 0.4,
            omega: 12.0,
            psi: 0.3,
            b_p: 0.2,
            lambda_p: 2.0,
            omega_p: 11.0,
            psi_p: -1.0,
            c2: 0.01,
            c1: -0.02,
            c0: 0.1,
        };
        let q = p.shift_origin(1.7);
        for tau in [0.0, 0.5, 2.0, 4.0] {
            assert!((p.eval_at(tau) - q.eval_at(tau + 1.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn ordered_swaps_components() {
        let p = FitParams {
            lambda: 3.0,
            omega: 10.0,
            lambda_p: 1.0,
            omega_p: 9.0,
            b: 1.0,
            b_p: 2.0,
            ..Default::default()
        }
        .ordered();
        assert_eq!((p.lambda, p.omega, p.b), (1.0, 9.0, 2.0));
        assert_eq!((p.lambda_p, p.omega_p, p.b_p), (3.0, 10.0, 1.0));
    }

    #[test]
    fn fft_peak_finds_tone() {
        let fs = 30.0;
        let x: Vec<f64> = (0..300).map(|k| (13.3 * k as f64 / fs + 0.2).cos()).collect();
        let w = fft_peak_omega(&x, fs).unwrap();
        assert!((w - 13.3).abs() < 0.05, "{w}");
    }

    #[test]
    fn flat_signal_is_rejected() {
        let s = PrincipalSignal::from_samples(30.0, (0..100).map(|k| k as f64 / 30.0).collect(), vec![2.0; 100])
            .unwrap();
        assert!(matches!(fit(&s, &FitConfig::default()), Err(Error::Invalid(_))));
    }

    #[test]
    fn rejects_nonpositive_delta() {
        let p = FitParams {
            b: 1.0,
            lambda: 0.5,
            omega: 18.0,
            ..Default::default()
        };
        let s = signal(&p, 30.0, 5.0);
        let cfg = FitConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert!(fit(&s, &cfg).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let p = FitParams {
            b: 1.5,
            lambda: 0.5,
            omega: 18.79,
            psi: 0.1,
            b_p: 0.3,
            lambda_p: 2.0,
            omega_p: 17.0,
            psi_p: -0.4,
            c2: 1e-4,
            c1: 2e-3,
            c0: -0.01,
        };
        let r = FitResult {
            params: p,
            loss: 0.25,
            features: p.features(),
            converged: true,
            n_restarts_used: 8,
        };
        let text = r.to_kv().to_text();
        for key in [
            "lambda", "omega", "lambda_p", "omega_p", "B", "B_p", "psi", "psi_p", "c2", "c1", "c0", "loss",
            "converged",
        ] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key}="))), "{key}");
        }
        let back = FitResult::from_kv(&KvMap::parse(&text).unwrap()).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.loss, 0.25);
        assert!(back.converged);
    }
}
