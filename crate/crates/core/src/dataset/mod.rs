//! Experiment harness: manifests, trial averaging, synthetic benchmarks,
//! evaluation reports.
//!
//! A manifest is a tab-separated text file. Container metadata comes first
//! as `#container` lines, then one recording per line:
//!
//! ```text
//! #container	grooved	0.1	grooved
//! # path	h	c	mu	class	container	group	split
//! train/g000_t0.csv	16	0	0.0414	-	grooved	g000	train
//! ```
//!
//! `h` is in mm, `c` in wt%, `mu` is log10 of cSt; `-` marks a missing
//! label. Recordings sharing a group are trials of the same setup and are
//! averaged in feature space.

mod report;
mod synth;

pub use report::{
    evaluate, run_benchmark, sweep, transfer_benchmark, BenchConfig, Confusion, EvalReport, ModelKind,
    PredictionRow, Task, TargetMetrics, TransferReport, train_regressor,
};
pub use synth::{
    gamma_from_concentration, generate_classification, generate_regression, mu_from_concentration,
    ClassBench, RegressionBench, GAMMA_WATER, MU_AT_C_MAX, MU_WATER, C_MAX,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig, FitResult};
use crate::models::{FeatureVector, LiquidLabel};
use crate::signal::{preprocess, PipelineConfig};
use crate::sim::MarkerSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerInfo {
    pub id: String,
    /// Length along the perturbation axis (m).
    pub length: f64,
    pub shape: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub path: PathBuf,
    pub label: LiquidLabel,
    pub container: String,
    pub group: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub containers: Vec<ContainerInfo>,
    pub entries: Vec<Entry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn opt_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<Option<T>> {
    if s == "-" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad {name} value {s:?}")))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl Manifest {
    /// Parses manifest text and checks its internal consistency (not file existence).
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m = Manifest {
            base_dir: base_dir.to_path_buf(),
            ..Default::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix("#container") {
                let f: Vec<&str> = rest.split('\t').filter(|s| !s.is_empty()).collect();
                if f.len() != 3 {
                    return Err(Error::parse(line, "#container needs id, L and shape"));
                }
                let length: f64 = f[1]
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad container length {:?}", f[1])))?;
                if !(length.is_finite() && length > 0.0) {
                    return Err(Error::parse(line, "container length must be > 0"));
                }
                m.containers.push(ContainerInfo {
                    id: f[0].to_string(),
                    length,
                    shape: f[2].to_string(),
                });
                continue;
            }
            if raw.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 8 {
                return Err(Error::parse(line, format!("expected 8 tab-separated fields, got {}", f.len())));
            }
            let label = LiquidLabel {
                h: opt_field(f[1], line, "h")?,
                c: opt_field(f[2], line, "c")?,
                mu: opt_field(f[3], line, "mu")?,
                class_id: opt_field(f[4], line, "class")?,
            };
            for v in [label.h, label.c, label.mu].into_iter().flatten() {
                if !v.is_finite() {
                    return Err(Error::parse(line, "labels must be finite"));
                }
            }
            m.entries.push(Entry {
                path: PathBuf::from(f[0]),
                label,
                container: f[5].to_string(),
                group: f[6].to_string(),
                split: Split::parse(f[7]).map_err(|_| Error::parse(line, format!("bad split {:?}", f[7])))?,
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.containers {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("container {:?} declared twice", c.id)));
            }
        }
        let mut paths = BTreeSet::new();
        let mut groups: BTreeMap<&str, &Entry> = BTreeMap::new();
        for e in &self.entries {
            if !ids.contains(e.container.as_str()) {
                return Err(Error::invalid(format!("entry {:?} uses undeclared container {:?}", e.path, e.container)));
            }
            if !paths.insert(&e.path) {
                return Err(Error::invalid(format!("recording {:?} listed twice", e.path)));
            }
            if let Some(first) = groups.insert(e.group.as_str(), e) {
                if first.split != e.split || first.container != e.container || first.label != e.label {
                    return Err(Error::invalid(format!(
                        "group {:?} mixes splits, containers or labels",
                        e.group
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads a manifest; relative paths resolve against its directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&fs::read_to_string(path)?, base)?;
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                return Err(Error::invalid(format!("recording {} does not exist", p.display())));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, e: &Entry) -> PathBuf {
        if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.base_dir.join(&e.path)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.containers {
            let _ = writeln!(out, "#container\t{}\t{}\t{}", c.id, c.length, c.shape);
        }
        out.push_str("# path\th\tc\tmu\tclass\tcontainer\tgroup\tsplit\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.path.display(),
                fmt_opt(e.label.h),
                fmt_opt(e.label.c),
                fmt_opt(e.label.mu),
                fmt_opt(e.label.class_id),
                e.container,
                e.group,
                e.split.name()
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn container(&self, id: &str) -> Option<&ContainerInfo> {
        self.containers.iter().find(|c| c.id == id)
    }
}

/// Mean `lambda` and `omega` over the converged results.
pub fn average_trials(group: &[FitResult]) -> Result<FeatureVector> {
    let ok: Vec<&FitResult> = group.iter().filter(|r| r.converged).collect();
    if ok.is_empty() {
        return Err(Error::numerical("no converged fit in trial group"));
    }
    let n = ok.len() as f64;
    Ok(FeatureVector {
        lambda: ok.iter().map(|r| r.features.lambda).sum::<f64>() / n,
        omega: ok.iter().map(|r| r.features.omega).sum::<f64>() / n,
    })
}

/// Averaged features of one trial group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatures {
    pub group: String,
    pub split: Split,
    pub container: String,
    pub label: LiquidLabel,
    pub features: FeatureVector,
    pub n_trials: usize,
    pub n_converged: usize,
}

/// Groups whose fits all failed are listed in `dropped`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub groups: Vec<GroupFeatures>,
    pub dropped: Vec<String>,
    pub n_recordings: usize,
}

impl FeatureTable {
    pub fn split(&self, split: Split) -> Vec<GroupFeatures> {
        self.groups.iter().filter(|g| g.split == split).cloned().collect()
    }

    pub fn recordings_in(&self, split: Split) -> usize {
        self.groups.iter().filter(|g| g.split == split).map(|g| g.n_trials).sum()
    }
}

/// Loads, preprocesses and fits one recording.
pub fn process_recording(path: &Path, pipeline: &PipelineConfig, fit_cfg: &FitConfig) -> Result<FitResult> {
    let series = MarkerSeries::load(path)?;
    let signal = preprocess(&series, pipeline)?;
    fit(&signal, fit_cfg)
}

/// Runs preprocess and fit on every recording (in parallel) and averages
/// trials per group. Recordings whose pipeline fails count as non-converged.
pub fn extract_features(manifest: &Manifest, pipeline: &PipelineConfig, fit_cfg: &FitConfig) -> Result<FeatureTable> {
    pipeline.validate()?;
    fit_cfg.validate()?;
    let results: Vec<Option<FitResult>> = manifest
        .entries
        .par_iter()
        .map(|e| process_recording(&manifest.resolve(e), pipeline, fit_cfg).ok())
        .collect();

    let mut order: Vec<&str> = Vec::new();
    let mut by_group: BTreeMap<&str, Vec<(usize, &Option<FitResult>)>> = BTreeMap::new();
    for (i, (e, r)) in manifest.entries.iter().zip(&results).enumerate() {
        let slot = by_group.entry(e.group.as_str()).or_default();
        if slot.is_empty() {
            order.push(e.group.as_str());
        }
        slot.push((i, r));
    }
    let mut table = FeatureTable {
        n_recordings: manifest.entries.len(),
        ..Default::default()
    };
    for g in order {
        let members = &by_group[g];
        let fits: Vec<FitResult> = members.iter().filter_map(|(_, r)| (*r).clone()).collect();
        let first = &manifest.entries[members[0].0];
        match average_trials(&fits) {
            Ok(features) => table.groups.push(GroupFeatures {
                group: g.to_string(),
                split: first.split,
                container: first.container.clone(),
                label: first.label,
                features,
                n_trials: members.len(),
                n_converged: fits.iter().filter(|f| f.converged).count(),
            }),
            Err(_) => table.dropped.push(g.to_string()),
        }
    }
    Ok(table)
}
