//! Training, prediction and metrics over extracted features.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::mix;
use super::{extract_features, FeatureTable, GroupFeatures, Manifest, Split};
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::kv::KvWriter;
use crate::models::{
    gpr_train_with, quad_fit, svm_train_with, FeatureVector, GprConfig, Model, Regressor, SvmConfig, Target,
};
use crate::signal::PipelineConfig;
use crate::transfer::{transfer_fit, TransferMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gpr,
    Quad,
    Svm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gpr => "gpr",
            ModelKind::Quad => "quad",
            ModelKind::Svm => "svm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gpr" => Ok(ModelKind::Gpr),
            "quad" => Ok(ModelKind::Quad),
            "svm" => Ok(ModelKind::Svm),
            _ => Err(Error::invalid(format!("unknown model kind {s:?} (expected gpr, quad or svm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// One independent model per target.
    Regression(Vec<Target>),
    Classification,
}

/// Pipeline and model settings for a benchmark run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchConfig {
    pub pipeline: PipelineConfig,
    pub fit: FitConfig,
    pub gpr: GprConfig,
    pub svm: SvmConfig,
    /// Uniformly subsample this many training groups.
    pub train_size: Option<usize>,
}

impl BenchConfig {
    /// Settings for the simulator benchmarks: a 6 Hz cutoff keeps every
    /// simulated sloshing frequency (up to about 3.5 Hz) in the pass band,
    /// and 4 fit restarts halve the cost with no loss of accuracy there.
    pub fn synthetic() -> Self {
        Self {
            pipeline: PipelineConfig {
                cutoff_hz: 6.0,
                ..Default::default()
            },
            fit: FitConfig {
                n_restarts: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMetrics {
    pub target: Target,
    pub mae: f64,
    pub mse: f64,
    pub train_mae: f64,
    /// Spread of the true values over train and test groups.
    pub range: f64,
}

/// Rows are true classes, columns predicted classes, both in `classes` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.counts.iter().flatten().sum();
        let hit: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub group: String,
    /// `h`, `c`, `mu` or `class`.
    pub target: String,
    pub truth: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// FNV-1a hash of the manifest text and every setting of the run.
    pub fingerprint: u64,
    pub task: String,
    pub model: ModelKind,
    pub seed: u64,
    /// Training groups actually used.
    pub train_size: usize,
    pub n_train_groups: usize,
    pub n_test_groups: usize,
    pub n_train_recordings: usize,
    pub n_test_recordings: usize,
    /// Groups without a single converged fit.
    pub n_dropped: usize,
    pub metrics: Vec<TargetMetrics>,
    pub confusion: Option<Confusion>,
    /// Test-set predictions.
    pub predictions: Vec<PredictionRow>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl EvalReport {
    pub fn metric(&self, target: Target) -> Option<&TargetMetrics> {
        self.metrics.iter().find(|m| m.target == target)
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("fingerprint", format!("{:016x}", self.fingerprint))
            .put("task", &self.task)
            .put("model", self.model.name())
            .put("seed", self.seed)
            .put("train_size", self.train_size)
            .put("n_train_groups", self.n_train_groups)
            .put("n_test_groups", self.n_test_groups)
            .put("n_train_recordings", self.n_train_recordings)
            .put("n_test_recordings", self.n_test_recordings)
            .put("n_dropped", self.n_dropped)
            .put("targets", join(self.metrics.iter().map(|m| m.target.name())));
        for m in &self.metrics {
            let t = m.target.name();
            w.put(&format!("{t}.mae"), m.mae)
                .put(&format!("{t}.mse"), m.mse)
                .put(&format!("{t}.train_mae"), m.train_mae)
                .put(&format!("{t}.range"), m.range);
        }
        if let Some(c) = &self.confusion {
            w.put("classes", join(&c.classes)).put("accuracy", c.accuracy());
            for (cls, row) in c.classes.iter().zip(&c.counts) {
                w.put(&format!("confusion.{cls}"), join(row));
            }
        }
        w.put("predictions", self.predictions.len());
        let mut out = String::from("# slosh evaluation report\n");
        out.push_str(&w.to_text());
        out.push_str("group\ttarget\ttruth\tpred\n");
        for p in &self.predictions {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.group, p.target, p.truth, p.pred);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut head = String::new();
        let mut n_pred = None;
        for (_, line) in lines.by_ref() {
            head.push_str(line);
            head.push('\n');
            if let Some(n) = line.strip_prefix("predictions=") {
                n_pred = Some(n.trim().parse::<usize>().map_err(|_| Error::invalid("bad predictions count"))?);
                break;
            }
        }
        let n_pred = n_pred.ok_or_else(|| Error::invalid("report lacks a predictions section"))?;
        let kv = crate::kv::KvMap::parse(&head)?;
        let metrics = kv
            .require::<String>("targets")?
            .split_whitespace()
            .map(|t| {
                let target = Target::parse(t)?;
                Ok(TargetMetrics {
                    target,
                    mae: kv.require(&format!("{t}.mae"))?,
                    mse: kv.require(&format!("{t}.mse"))?,
                    train_mae: kv.require(&format!("{t}.train_mae"))?,
                    range: kv.require(&format!("{t}.range"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let confusion = match kv.get::<String>("classes")? {
            None => None,
            Some(cls) => {
                let classes = cls
                    .split_whitespace()
                    .map(|c| c.parse::<u32>().map_err(|_| Error::invalid("bad class id")))
                    .collect::<Result<Vec<_>>>()?;
                let counts = classes
                    .iter()
                    .map(|c| {
                        let row: String = kv.require(&format!("confusion.{c}"))?;
                        row.split_whitespace()
                            .map(|v| v.parse::<usize>().map_err(|_| Error::invalid("bad confusion count")))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Confusion { classes, counts })
            }
        };
        match lines.next() {
            Some((_, "group\ttarget\ttruth\tpred")) => {}
            _ => return Err(Error::invalid("missing prediction table header")),
        }
        let mut predictions = Vec::with_capacity(n_pred);
        for (i, line) in lines.take(n_pred) {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, "bad prediction value"));
            if f.len() != 4 {
                return Err(Error::parse(i + 1, "prediction rows need 4 fields"));
            }
            predictions.push(PredictionRow {
                group: f[0].to_string(),
                target: f[1].to_string(),
                truth: num(f[2])?,
                pred: num(f[3])?,
            });
        }
        if predictions.len() != n_pred {
            return Err(Error::invalid("prediction table is truncated"));
        }
        let fp: String = kv.require("fingerprint")?;
        Ok(Self {
            fingerprint: u64::from_str_radix(&fp, 16).map_err(|_| Error::invalid("bad fingerprint"))?,
            task: kv.require("task")?,
            model: ModelKind::parse(&kv.require::<String>("model")?)?,
            seed: kv.require("seed")?,
            train_size: kv.require("train_size")?,
            n_train_groups: kv.require("n_train_groups")?,
            n_test_groups: kv.require("n_test_groups")?,
            n_train_recordings: kv.require("n_train_recordings")?,
            n_test_recordings: kv.require("n_test_recordings")?,
            n_dropped: kv.require("n_dropped")?,
            metrics,
            confusion,
            predictions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// `k` of `n` indices, uniformly without replacement, in ascending order.
fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, k as u64, 4));
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn pairs(groups: &[GroupFeatures], target: Target) -> Result<(Vec<FeatureVector>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(groups.len());
    let mut ys = Vec::with_capacity(groups.len());
    for g in groups {
        let y = target
            .get(&g.label)
            .ok_or_else(|| Error::invalid(format!("group {:?} has no {} label", g.group, target.name())))?;
        xs.push(g.features);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Trains a regressor of the given kind.
pub fn train_regressor(kind: ModelKind, xs: &[FeatureVector], ys: &[f64], cfg: &BenchConfig) -> Result<Model> {
    match kind {
        ModelKind::Gpr => Ok(Model::Gpr(gpr_train_with(xs, ys, &cfg.gpr)?)),
        ModelKind::Quad => Ok(Model::Quad(quad_fit(xs, ys)?)),
        ModelKind::Svm => Err(Error::invalid("svm is a classifier; use the classification task")),
    }
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// Trains on the train split (optionally subsampled) and scores the test split.
pub fn evaluate(
    table: &FeatureTable,
    task: &Task,
    kind: ModelKind,
    cfg: &BenchConfig,
    seed: u64,
    fingerprint: u64,
) -> Result<EvalReport> {
    let all_train = table.split(Split::Train);
    let test = table.split(Split::Test);
    if all_train.is_empty() || test.is_empty() {
        return Err(Error::invalid("benchmark needs both train and test groups"));
    }
    let train: Vec<GroupFeatures> = match cfg.train_size {
        None => all_train.clone(),
        Some(k) if k == 0 || k > all_train.len() => {
            return Err(Error::invalid(format!(
                "train_size {k} outside 1..={}",
                all_train.len()
            )))
        }
        Some(k) => subsample(all_train.len(), k, seed)
            .into_iter()
            .map(|i| all_train[i].clone())
            .collect(),
    };

    let mut metrics = Vec::new();
    let mut predictions = Vec::new();
    let mut confusion = None;
    let task_name = match task {
        Task::Regression(targets) => {
            if kind == ModelKind::Svm {
                return Err(Error::invalid("regression needs a gpr or quad model"));
            }
            if targets.is_empty() {
                return Err(Error::invalid("no regression targets requested"));
            }
            for &target in targets {
                let (xs, ys) = pairs(&train, target)?;
                let (tx, ty) = pairs(&test, target)?;
                let model = train_regressor(kind, &xs, &ys, cfg)?;
                let fit_train: Vec<f64> = xs.iter().map(|x| model.predict(x)).collect();
                let pred: Vec<f64> = tx.iter().map(|x| model.predict(x)).collect();
                let (lo, hi) = ys
                    .iter()
                    .chain(&ty)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                metrics.push(TargetMetrics {
                    target,
                    mae: mean_abs(&pred, &ty),
                    mse: pred.iter().zip(&ty).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / ty.len() as f64,
                    train_mae: mean_abs(&fit_train, &ys),
                    range: hi - lo,
                });
                for ((g, &y), &p) in test.iter().zip(&ty).zip(&pred) {
                    predictions.push(PredictionRow {
                        group: g.group.clone(),
                        target: target.name().to_string(),
                        truth: y,
                        pred: p,
                    });
                }
            }
            "regression"
        }
        Task::Classification => {
            if kind != ModelKind::Svm {
                return Err(Error::invalid("classification needs the svm model"));
            }
            let labels = |gs: &[GroupFeatures]| -> Result<Vec<u32>> {
                gs.iter()
                    .map(|g| {
                        g.label
                            .class_id
                            .ok_or_else(|| Error::invalid(format!("group {:?} has no class label", g.group)))
                    })
                    .collect()
            };
            let ys = labels(&train)?;
            let ty = labels(&test)?;
            let xs: Vec<FeatureVector> = train.iter().map(|g| g.features).collect();
            let model = svm_train_with(&xs, &ys, &cfg.svm)?;
            let mut classes: Vec<u32> = ys.iter().chain(&ty).copied().collect();
            classes.sort_unstable();
            classes.dedup();
            let pos = |c: u32| classes.binary_search(&c).expect("class listed");
            let mut counts = vec![vec![0usize; classes.len()]; classes.len()];
            for (g, &y) in test.iter().zip(&ty) {
                let p = model.predict(&g.features);
                // a predicted class is always a training class, hence listed
                counts[pos(y)][pos(p)] += 1;
                predictions.push(PredictionRow {
                    group: g.group.clone(),
                    target: "class".into(),
                    truth: y as f64,
                    pred: p as f64,
                });
            }
            confusion = Some(Confusion { classes, counts });
            "classification"
        }
    };
    Ok(EvalReport {
        fingerprint,
        task: task_name.into(),
        model: kind,
        seed,
        train_size: train.len(),
        n_train_groups: all_train.len(),
        n_test_groups: test.len(),
        n_train_recordings: table.recordings_in(Split::Train),
        n_test_recordings: table.recordings_in(Split::Test),
        n_dropped: table.dropped.len(),
        metrics,
        confusion,
        predictions,
    })
}

fn fingerprint(manifest: &Manifest, task: &Task, kind: ModelKind, cfg: &BenchConfig, seed: u64) -> u64 {
    let mut s = manifest.to_text();
    let _ = write!(s, "\n{task:?}\n{}\n{cfg:?}\n{seed}", kind.name());
    fnv1a(s.as_bytes())
}

/// Preprocess, fit, average trials, train and score in one go.
pub fn run_benchmark(
    manifest: &Manifest,
    task: &Task,
    kind: ModelKind,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<EvalReport> {
    let table = extract_features(manifest, &cfg.pipeline, &cfg.fit)?;
    evaluate(&table, task, kind, cfg, seed, fingerprint(manifest, task, kind, cfg, seed))
}

/// One report per training-set size; features are extracted once.
pub fn sweep(
    manifest: &Manifest,
    task: &Task,
    kind: ModelKind,
    cfg: &BenchConfig,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let table = extract_features(manifest, &cfg.pipeline, &cfg.fit)?;
    sizes
        .iter()
        .map(|&k| {
            let c = BenchConfig {
                train_size: Some(k),
                ..cfg.clone()
            };
            evaluate(&table, task, kind, &c, seed, fingerprint(manifest, task, kind, &c, seed))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub target: Target,
    pub tune_size: usize,
    pub seed: u64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Held-out MAE of the warped base model.
    pub mae_transfer: f64,
    /// Held-out MAE of a GPR trained from scratch on the tuning set.
    pub mae_scratch: f64,
    /// Held-out MAE of the base model used as is.
    pub mae_identity: f64,
    pub n_test: usize,
}

impl TransferReport {
    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("target", self.target.name())
            .put("tune_size", self.tune_size)
            .put("seed", self.seed)
            .put("alpha1", self.alpha1)
            .put("alpha2", self.alpha2)
            .put("beta1", self.beta1)
            .put("beta2", self.beta2)
            .put("mae_transfer", self.mae_transfer)
            .put("mae_scratch", self.mae_scratch)
            .put("mae_identity", self.mae_identity)
            .put("n_test", self.n_test);
        w.to_text()
    }
}

/// Fits a warp of `base` on `tune_size` training groups of container B and
/// compares it on B's test split with a GPR trained only on those groups.
pub fn transfer_benchmark(
    base: &Model,
    b: &FeatureTable,
    target: Target,
    tune_size: usize,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<(TransferReport, TransferMap)> {
    let pool = b.split(Split::Train);
    let test = b.split(Split::Test);
    if tune_size < 4 || tune_size > pool.len() {
        return Err(Error::invalid(format!(
            "tune_size {tune_size} outside 4..={}",
            pool.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::invalid("container B has no test groups"));
    }
    let tune: Vec<GroupFeatures> = subsample(pool.len(), tune_size, seed)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let (xs, ys) = pairs(&tune, target)?;
    let (tx, ty) = pairs(&test, target)?;
    let data: Vec<(FeatureVector, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let map = transfer_fit(base, &data)?;
    let scratch = gpr_train_with(&xs, &ys, &cfg.gpr)?;
    let score = |f: &dyn Fn(&FeatureVector) -> f64| {
        let p: Vec<f64> = tx.iter().map(f).collect();
        mean_abs(&p, &ty)
    };
    let report = TransferReport {
        target,
        tune_size,
        seed,
        alpha1: map.alpha1,
        alpha2: map.alpha2,
        beta1: map.beta1,
        beta2: map.beta2,
        mae_transfer: score(&|x| map.predict(x)),
        mae_scratch: score(&|x| scratch.predict(x)),
        mae_identity: score(&|x| base.predict(x)),
        n_test: tx.len(),
    };
    Ok((report, map))
}
