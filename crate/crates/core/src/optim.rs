//! Derivative-free minimisation (Nelder-Mead) with multi-start.
//!
//! Shared by the oscillation fitter, GPR hyperparameter search and the
//! container-transfer warp. Objectives may return `f64::INFINITY` to reject a
//! point (box constraints); NaN is treated the same way.

use std::cell::Cell;

use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Relative spread of function values across the simplex at convergence.
    pub ftol: f64,
    /// Absolute floor added to the `ftol` test, for minima at or near zero.
    pub fatol: f64,
    /// Absolute spread of vertices around the best one at convergence.
    pub xtol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            ftol: 1e-10,
            fatol: 0.0,
            xtol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Minimises `f` from `x0` with an axis-aligned initial simplex of edge `step[i]`.
///
/// Uses the dimension-adaptive coefficients of Gao and Han, which behave
/// better than the classical ones beyond a handful of dimensions.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(step.len(), n, "step length must match dimension");
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let evals = Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(f(x))
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut converged = false;

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    loop {
        // sort ascending by value; ties keep insertion order
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        let fspread = (worst - best).abs();
        let xspread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if best.is_finite()
            && fspread <= cfg.ftol * (best.abs() + 1e-300) + cfg.fatol
            && xspread <= cfg.xtol.max(1e-12)
        {
            converged = true;
            break;
        }
        if best.is_finite() && fspread == 0.0 && xspread <= cfg.xtol * 1e3 {
            converged = true;
            break;
        }
        if evals.get() >= cfg.max_evals {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }

        let worst_v = simplex[n].clone();
        for i in 0..n {
            trial[i] = centroid[i] + alpha * (centroid[i] - worst_v[i]);
        }
        let fr = eval(&trial);

        if fr < values[0] {
            for i in 0..n {
                trial2[i] = centroid[i] + beta * (trial[i] - centroid[i]);
            }
            let fe = eval(&trial2);
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }

        // contraction, outside if the reflection improved on the worst point
        let outside = fr < values[n];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + gamma * (trial[i] - centroid[i])
            } else {
                centroid[i] - gamma * (centroid[i] - worst_v[i])
            };
        }
        let fc = eval(&trial2);
        if (outside && fc <= fr) || (!outside && fc < values[n]) {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }

        // shrink toward the best vertex
        let best_v = simplex[0].clone();
        for k in 1..=n {
            for i in 0..n {
                simplex[k][i] = best_v[i] + delta * (simplex[k][i] - best_v[i]);
            }
            values[k] = eval(&simplex[k]);
        }
    }

    let (ibest, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("simplex is never empty");
    Minimum {
        x: simplex[ibest].clone(),
        f: values[ibest],
        evals: evals.get(),
        converged,
    }
}

/// Runs one Nelder-Mead per start point in parallel and returns the index and
/// result of the lowest minimum. Ties go to the lowest start index.
pub fn multi_start<F>(
    f: F,
    starts: &[Vec<f64>],
    step: &[f64],
    cfg: &NelderMeadConfig,
) -> (usize, Minimum, Vec<Minimum>)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(!starts.is_empty(), "multi_start needs at least one start");
    let runs: Vec<Minimum> = starts
        .par_iter()
        .map(|x0| nelder_mead(&f, x0, step, cfg))
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.f < runs[best].f {
            best = i;
        }
    }
    (best, runs[best].clone(), runs)
}
