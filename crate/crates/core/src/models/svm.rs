//! RBF-kernel support vector classifier, one-vs-one, trained by SMO with
//! second-order working-set selection.

use nalgebra::DMatrix;

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::kv::KvMap;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// RBF coefficient in `exp(-gamma |x - x'|^2)`, in the units the kernel
    /// sees. `None` picks `1 / (2 d var)` from the training features.
    pub gamma: Option<f64>,
    /// Standardise features to zero mean, unit variance before the kernel.
    pub standardize: bool,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: None,
            standardize: true,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmConfig {
    /// Overrides defaults with the keys present in `kv`.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        crate::signal::reject_unknown(kv, &["c", "gamma", "standardize", "tol", "max_iter"])?;
        let d = Self::default();
        let cfg = Self {
            c: kv.get("c")?.unwrap_or(d.c),
            gamma: kv.get("gamma")?.or(d.gamma),
            standardize: kv.get("standardize")?.unwrap_or(d.standardize),
            tol: kv.get("tol")?.unwrap_or(d.tol),
            max_iter: kv.get("max_iter")?.unwrap_or(d.max_iter),
        };
        if !(cfg.c > 0.0 && cfg.tol > 0.0) || cfg.gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::invalid("svm c, tol and gamma must be > 0"));
        }
        Ok(cfg)
    }
}

/// One binary machine separating `pos` (decision > 0) from `neg`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub pos: u32,
    pub neg: u32,
    /// Indices into the model's support vector table.
    pub sv: Vec<usize>,
    /// `alpha_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Maximal KKT violation at termination.
    pub kkt_gap: f64,
    /// Raw dual variables of the support vectors, each in `[0, C]`.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<u32>,
    /// Support vectors in kernel units (standardised if enabled).
    pub support: Vec<[f64; 2]>,
    pub machines: Vec<BinaryMachine>,
    pub gamma: f64,
    pub c: f64,
    pub x_mean: [f64; 2],
    pub x_std: [f64; 2],
}

fn kernel(gamma: f64, a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    (-gamma * (d0 * d0 + d1 * d1)).exp()
}

struct SmoSolution {
    alpha: Vec<f64>,
    rho: f64,
    gap: f64,
}

/// Solves `min 1/2 a'Qa - e'a`, `0 <= a <= C`, `y'a = 0`.
fn smo(k: &DMatrix<f64>, y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<SmoSolution> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iter = 0;
    let gap = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let (viol, gd) = if y[t] > 0.0 {
                if lower(alpha[t]) {
                    continue;
                }
                (grad[t], gmax + grad[t])
            } else {
                if upper(alpha[t]) {
                    continue;
                }
                (-grad[t], gmax - grad[t])
            };
            gmax2 = gmax2.max(viol);
            if i != usize::MAX && gd > 0.0 {
                let mut quad = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -gd * gd / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        let gap = gmax + gmax2;
        if gap < tol || i == usize::MAX || j == usize::MAX {
            break gap.max(0.0);
        }
        iter += 1;
        if iter > max_iter {
            return Err(Error::numerical(format!(
                "SMO did not converge in {max_iter} iterations (gap {gap})"
            )));
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[(i, j)];
        if y[i] != y[j] {
            let mut quad = k[(i, i)] + k[(j, j)] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[(t, i)] * di + y[j] * k[(t, j)] * dj);
        }
    };

    // offset from free variables, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut nfree, mut sfree) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sfree += yg;
        }
    }
    let rho = if nfree > 0 {
        sfree / nfree as f64
    } else {
        0.5 * (ub + lb)
    };
    Ok(SmoSolution { alpha, rho, gap })
}

/// Trains a one-vs-one RBF SVM with default settings and explicit `c`, `gamma`.
pub fn svm_train(features: &[FeatureVector], labels: &[u32], c: f64, gamma: Option<f64>) -> Result<SvmModel> {
    svm_train_with(
        features,
        labels,
        &SvmConfig {
            c,
            gamma,
            ..Default::default()
        },
    )
}

pub fn svm_train_with(features: &[FeatureVector], labels: &[u32], cfg: &SvmConfig) -> Result<SvmModel> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::invalid("features and labels must be nonempty and equal length"));
    }
    if !(cfg.c.is_finite() && cfg.c > 0.0) {
        return Err(Error::invalid("C must be > 0"));
    }
    if features.iter().any(|f| !(f.lambda.is_finite() && f.omega.is_finite())) {
        return Err(Error::invalid("non-finite features"));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("SVM needs at least 2 classes"));
    }

    let n = features.len() as f64;
    let raw: Vec<[f64; 2]> = features.iter().map(FeatureVector::as_array).collect();
    let (mut x_mean, mut x_std) = ([0.0; 2], [1.0; 2]);
    if cfg.standardize {
        for d in 0..2 {
            let m = raw.iter().map(|r| r[d]).sum::<f64>() / n;
            let v = raw.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / n;
            x_mean[d] = m;
            x_std[d] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
    }
    let x: Vec<[f64; 2]> = raw
        .iter()
        .map(|r| [(r[0] - x_mean[0]) / x_std[0], (r[1] - x_mean[1]) / x_std[1]])
        .collect();
    let gamma = match cfg.gamma {
        Some(g) if g.is_finite() && g > 0.0 => g,
        Some(g) => return Err(Error::invalid(format!("gamma must be > 0, got {g}"))),
        None => {
            let all: Vec<f64> = x.iter().flat_map(|r| r.iter().copied()).collect();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
            if var > 0.0 {
                1.0 / (2.0 * 2.0 * var)
            } else {
                1.0
            }
        }
    };

    let mut support: Vec<[f64; 2]> = Vec::new();
    let mut sv_index: Vec<Option<usize>> = vec![None; x.len()];
    let mut machines = Vec::new();
    for (a, &ca) in classes.iter().enumerate() {
        for &cb in &classes[a + 1..] {
            let idx: Vec<usize> = (0..x.len())
                .filter(|&i| labels[i] == ca || labels[i] == cb)
                .collect();
            let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == ca { 1.0 } else { -1.0 }).collect();
            let k = DMatrix::from_fn(idx.len(), idx.len(), |p, q| kernel(gamma, &x[idx[p]], &x[idx[q]]));
            let sol = smo(&k, &y, cfg.c, cfg.tol, cfg.max_iter)?;
            let mut m = BinaryMachine {
                pos: ca,
                neg: cb,
                sv: Vec::new(),
                coef: Vec::new(),
                rho: sol.rho,
                kkt_gap: sol.gap,
                alpha: Vec::new(),
            };
            for (p, &i) in idx.iter().enumerate() {
                if sol.alpha[p] > 0.0 {
                    let s = *sv_index[i].get_or_insert_with(|| {
                        support.push(x[i]);
                        support.len() - 1
                    });
                    m.sv.push(s);
                    m.coef.push(sol.alpha[p] * y[p]);
                    m.alpha.push(sol.alpha[p]);
                }
            }
            machines.push(m);
        }
    }
    Ok(SvmModel {
        classes,
        support,
        machines,
        gamma,
        c: cfg.c,
        x_mean,
        x_std,
    })
}

impl SvmModel {
    fn to_kernel_space(&self, x: &FeatureVector) -> [f64; 2] {
        [
            (x.lambda - self.x_mean[0]) / self.x_std[0],
            (x.omega - self.x_mean[1]) / self.x_std[1],
        ]
    }

    /// Decision value of every binary machine at `x`.
    pub fn decision_values(&self, x: &FeatureVector) -> Vec<f64> {
        let xs = self.to_kernel_space(x);
        let kv: Vec<f64> = self.support.iter().map(|s| kernel(self.gamma, s, &xs)).collect();
        self.machines
            .iter()
            .map(|m| m.sv.iter().zip(&m.coef).map(|(&s, c)| c * kv[s]).sum::<f64>() - m.rho)
            .collect()
    }

    /// Majority vote; ties go to the lowest class id.
    pub fn predict(&self, x: &FeatureVector) -> u32 {
        let dv = self.decision_values(x);
        let mut votes = vec![0usize; self.classes.len()];
        let pos_of = |c: u32| self.classes.binary_search(&c).expect("known class");
        for (m, d) in self.machines.iter().zip(dv) {
            let winner = if d > 0.0 { m.pos } else { m.neg };
            votes[pos_of(winner)] += 1;
        }
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

pub fn svm_predict(model: &SvmModel, x: &FeatureVector) -> u32 {
    model.predict(x)
}
