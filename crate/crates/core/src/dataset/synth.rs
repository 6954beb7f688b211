//! Synthetic benchmark generators driven by the simulator.
//!
//! Concentration enters only through the damping factor. The curve below is
//! a modeling choice, not a measured one: `mu` (log10 cSt) runs linearly
//! from water (1.1 cSt) at 0 wt% to 62.6 cSt at 160 wt%, and damping scales
//! with the square root of viscosity, `gamma = GAMMA_WATER * 10^((mu - MU_WATER) / 2)`,
//! which gives `gamma` between 0.4 and about 3.0 1/s.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ContainerInfo, Entry, Manifest, Split};
use crate::error::{Error, Result};
use crate::models::LiquidLabel;
use crate::sim::{render_markers, simulate_nonlinear, SimConfig};

/// log10 of 1.1 cSt.
pub const MU_WATER: f64 = 0.041_392_685_158_225_07;
/// log10 of 62.6 cSt.
pub const MU_AT_C_MAX: f64 = 1.796_574_333_210_429_6;
pub const C_MAX: f64 = 160.0;
/// Damping factor of water (1/s).
pub const GAMMA_WATER: f64 = 0.4;

pub fn mu_from_concentration(c: f64) -> f64 {
    MU_WATER + c * (MU_AT_C_MAX - MU_WATER) / C_MAX
}

pub fn gamma_from_concentration(c: f64) -> f64 {
    GAMMA_WATER * 10f64.powf((mu_from_concentration(c) - MU_WATER) / 2.0)
}

/// splitmix64 finaliser over a seed and two indices.
pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Concentration x height grid: one recording per training setup and
/// several trials per test setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBench {
    pub container: ContainerInfo,
    /// Everything except length, height, damping and noise.
    pub base: SimConfig,
    pub train_c: Vec<f64>,
    pub test_c: Vec<f64>,
    pub heights_mm: Vec<f64>,
    pub train_trials: usize,
    pub test_trials: usize,
    /// Marker noise std as a fraction of the peak lateral force.
    pub noise_frac: f64,
}

impl RegressionBench {
    /// 9 x 12 training setups, 8 x 12 test setups with 3 trials each, mildly
    /// nonlinear damping, 1% noise.
    pub fn grooved() -> Self {
        Self {
            container: ContainerInfo {
                id: "grooved".into(),
                length: 0.10,
                shape: "grooved".into(),
            },
            base: SimConfig {
                kappa: 300.0,
                eps0: 0.008,
                ..SimConfig::default()
            },
            train_c: linspace(0.0, 160.0, 9),
            test_c: linspace(10.0, 150.0, 8),
            heights_mm: linspace(16.0, 40.0, 12),
            train_trials: 1,
            test_trials: 3,
            noise_frac: 0.01,
        }
    }

    /// Linear damping with slow marker slip, as on a smooth wall.
    pub fn smooth() -> Self {
        Self {
            container: ContainerInfo {
                id: "smooth".into(),
                length: 0.09,
                shape: "smooth".into(),
            },
            base: SimConfig {
                slip: [0.0, 0.002, 0.0],
                ..SimConfig::default()
            },
            ..Self::grooved()
        }
    }

    /// The same setups in a container of another length.
    pub fn with_length(&self, id: &str, length: f64) -> Self {
        let mut out = self.clone();
        out.container.id = id.to_string();
        out.container.length = length;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_c.is_empty() || self.test_c.is_empty() || self.heights_mm.is_empty() {
            return Err(Error::invalid("benchmark grid is empty"));
        }
        if self.train_trials == 0 || self.test_trials == 0 {
            return Err(Error::invalid("benchmark needs at least one trial per setup"));
        }
        if !(self.noise_frac >= 0.0) {
            return Err(Error::invalid("noise_frac must be >= 0"));
        }
        let mut cfg = self.base.clone();
        cfg.length = self.container.length;
        cfg.validate()
    }
}

/// Liquid classes told apart by damping alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBench {
    pub container: ContainerInfo,
    pub base: SimConfig,
    /// `(class_id, gamma)` per class.
    pub classes: Vec<(u32, f64)>,
    /// Height range (mm): training heights span it evenly, test heights are
    /// drawn uniformly from it.
    pub heights_mm: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
    pub noise_frac: f64,
}

impl ClassBench {
    /// Water-, oil- and detergent-like damping in a 60 mm tall container
    /// filled to between one and two thirds, 8 training and 70 test recordings per class.
    pub fn three_liquids() -> Self {
        Self {
            container: ContainerInfo {
                id: "cup".into(),
                length: 0.10,
                shape: "grooved".into(),
            },
            base: SimConfig::default(),
            classes: vec![(0, 0.2), (1, 2.0), (2, 8.0)],
            heights_mm: (20.0, 40.0),
            n_train: 8,
            n_test: 70,
            noise_frac: 0.01,
        }
    }
}

struct Job {
    entry: Entry,
    cfg: SimConfig,
    /// Noise std relative to the peak lateral force of this recording.
    noise_frac: f64,
    seed: u64,
}

fn run_jobs(dir: &Path, container: &ContainerInfo, jobs: Vec<Job>) -> Result<Manifest> {
    fs::create_dir_all(dir.join(&container.id))?;
    jobs.par_iter().try_for_each(|job| -> Result<()> {
        let mut cfg = job.cfg.clone();
        let trace = simulate_nonlinear(&cfg)?;
        let peak = trace.fx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        cfg.noise_std = job.noise_frac * peak;
        let series = render_markers(&trace, &cfg, job.seed)?;
        series.save(&dir.join(&job.entry.path))
    })?;
    let manifest = Manifest {
        containers: vec![container.clone()],
        entries: jobs.into_iter().map(|j| j.entry).collect(),
        base_dir: dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(&dir.join(format!("{}.tsv", container.id)))?;
    Ok(manifest)
}

/// Writes the recordings of `bench` under `dir/<container id>/` and the
/// manifest to `dir/<container id>.tsv`.
pub fn generate_regression(bench: &RegressionBench, dir: &Path, seed: u64) -> Result<Manifest> {
    bench.validate()?;
    let id = &bench.container.id;
    let mut jobs = Vec::new();
    for (split, levels, trials) in [
        (Split::Train, &bench.train_c, bench.train_trials),
        (Split::Test, &bench.test_c, bench.test_trials),
    ] {
        for (ci, &c) in levels.iter().enumerate() {
            for (hi, &h) in bench.heights_mm.iter().enumerate() {
                let group = format!("{id}-{}-c{ci:02}-h{hi:02}", split.name());
                let label = LiquidLabel {
                    h: Some(h),
                    c: Some(c),
                    mu: Some(mu_from_concentration(c)),
                    class_id: None,
                };
                let cfg = SimConfig {
                    length: bench.container.length,
                    height: h / 1000.0,
                    gamma: gamma_from_concentration(c),
                    ..bench.base.clone()
                };
                for t in 0..trials {
                    let idx = jobs.len() as u64;
                    jobs.push(Job {
                        entry: Entry {
                            path: format!("{id}/{group}-t{t}.csv").into(),
                            label,
                            container: id.clone(),
                            group: group.clone(),
                            split,
                        },
                        cfg: cfg.clone(),
                        noise_frac: bench.noise_frac,
                        seed: mix(seed, idx, 1),
                    });
                }
            }
        }
    }
    run_jobs(dir, &bench.container, jobs)
}

/// Writes a classification benchmark under `dir/<container id>/`.
pub fn generate_classification(bench: &ClassBench, dir: &Path, seed: u64) -> Result<Manifest> {
    let (lo, hi) = bench.heights_mm;
    if bench.classes.len() < 2 || bench.n_train == 0 || bench.n_test == 0 || !(lo > 0.0 && hi >= lo) {
        return Err(Error::invalid("classification benchmark needs >= 2 classes and a valid height range"));
    }
    let id = &bench.container.id;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0, 2));
    let mut jobs = Vec::new();
    for &(class, gamma) in &bench.classes {
        for (split, n) in [(Split::Train, bench.n_train), (Split::Test, bench.n_test)] {
            for k in 0..n {
                let h = match split {
                    Split::Train if n > 1 => lo + (hi - lo) * k as f64 / (n - 1) as f64,
                    Split::Train => 0.5 * (lo + hi),
                    Split::Test => rng.random_range(lo..=hi),
                };
                let group = format!("{id}-{}-k{class}-{k:03}", split.name());
                let idx = jobs.len() as u64;
                jobs.push(Job {
                    entry: Entry {
                        path: format!("{id}/{group}.csv").into(),
                        label: LiquidLabel {
                            h: Some(h),
                            class_id: Some(class),
                            ..Default::default()
                        },
                        container: id.clone(),
                        group,
                        split,
                    },
                    cfg: SimConfig {
                        length: bench.container.length,
                        height: h / 1000.0,
                        gamma,
                        ..bench.base.clone()
                    },
                    noise_frac: bench.noise_frac,
                    seed: mix(seed, idx, 3),
                });
            }
        }
    }
    run_jobs(dir, &bench.container, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentration_curve_endpoints() {
        assert!((mu_from_concentration(0.0) - 1.1f64.log10()).abs() < 1e-15);
        assert!((mu_from_concentration(160.0) - 62.6f64.log10()).abs() < 1e-15);
        assert!((gamma_from_concentration(0.0) - GAMMA_WATER).abs() < 1e-15);
        let g160 = gamma_from_concentration(160.0);
        assert!((g160 - 0.4 * (62.6f64 / 1.1).sqrt()).abs() < 1e-12);
        for c in [0.0, 40.0, 80.0, 120.0] {
            assert!(gamma_from_concentration(c + 40.0) > gamma_from_concentration(c));
        }
    }

    #[test]
    fn mix_spreads_indices() {
        let a: Vec<u64> = (0..100).map(|i| mix(7, i, 1)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(mix(7, 0, 1), mix(8, 0, 1));
    }

    #[test]
    fn small_grid_is_split_clean_and_reproducible() {
        let bench = RegressionBench {
            train_c: vec![0.0, 80.0],
            test_c: vec![40.0],
            heights_mm: vec![20.0, 30.0],
            ..RegressionBench::grooved()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_regression(&bench, d1.path(), 5).unwrap();
        let m2 = generate_regression(&bench, d2.path(), 5).unwrap();
        assert_eq!(m1.entries.len(), 4 + 2 * 3);
        assert_eq!(m1.to_text(), m2.to_text());
        for e in &m1.entries {
            let a = fs::read(m1.resolve(e)).unwrap();
            let b = fs::read(m2.resolve(e)).unwrap();
            assert_eq!(a, b);
        }
        let train: Vec<_> = m1.entries.iter().filter(|e| e.split == Split::Train).map(|e| &e.group).collect();
        assert!(m1.entries.iter().filter(|e| e.split == Split::Test).all(|e| !train.contains(&&e.group)));
        let reread = Manifest::load(&d1.path().join("grooved.tsv")).unwrap();
        assert_eq!(reread.entries, m1.entries);
    }

    #[test]
    fn classification_train_heights_span_the_range() {
        let bench = ClassBench {
            n_train: 3,
            n_test: 2,
            ..ClassBench::three_liquids()
        };
        let d = tempfile::tempdir().unwrap();
        let m = generate_classification(&bench, d.path(), 1).unwrap();
        let mut train: Vec<f64> = m
            .entries
            .iter()
            .filter(|e| e.split == Split::Train && e.label.class_id == Some(0))
            .map(|e| e.label.h.unwrap())
            .collect();
        train.sort_by(f64::total_cmp);
        assert_eq!(train, vec![20.0, 30.0, 40.0]);
        for e in m.entries.iter().filter(|e| e.split == Split::Test) {
            let h = e.label.h.unwrap();
            assert!((20.0..=40.0).contains(&h));
        }
    }
}
