//! `slosh`: simulate, preprocess, fit, train and evaluate from the shell.
//!
//! Exit status is 0 on success, 1 for invalid input (bad flags, files or
//! configs) and 2 when the numerics fail.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use slosh_core::dataset::{
    extract_features, generate_classification, generate_regression, run_benchmark, sweep, train_regressor,
    transfer_benchmark, BenchConfig, ClassBench, EvalReport, Manifest, ModelKind, RegressionBench, Split, Task,
};
use slosh_core::fit::{fit, FitResult};
use slosh_core::models::{load_model, save_model, FeatureVector, Model, Target};
use slosh_core::plot::{emit_plotdata, GridSpec, PlotKind, PlotSource};
use slosh_core::signal::{preprocess, PrincipalSignal};
use slosh_core::sim::{render_markers, simulate_linear, simulate_nonlinear, MarkerSeries};

use config::Settings;

#[derive(Parser, Debug)]
#[command(name = "slosh", version, about = "Liquid property estimation from tactile sloshing signals")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// key=value file with sim., pipeline., fit., gpr. and svm. sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trial and render its marker recording.
    Simulate(SimulateArgs),
    /// Marker recording to principal signal.
    Preprocess {
        markers: PathBuf,
    },
    /// Fit the damped-oscillation model to a principal signal.
    Fit {
        signal: PathBuf,
    },
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Predict a scalar property.
    Predict(PredictArgs),
    /// Predict a liquid class with an SVM model.
    Classify(PredictArgs),
    /// Fit a feature warp of a trained model onto a second container.
    Transfer(TransferArgs),
    /// Run a full benchmark and write an evaluation report.
    Bench(BenchArgs),
    /// Benchmark over several training-set sizes.
    Sweep(SweepArgs),
    /// Write an SVG and a data table for one figure.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Liquid height (m).
    #[arg(long)]
    height: Option<f64>,
    /// Linear damping factor (1/s).
    #[arg(long)]
    gamma: Option<f64>,
    /// Cubic damping factor (s/m^2).
    #[arg(long)]
    kappa: Option<f64>,
    /// Container length (m).
    #[arg(long)]
    length: Option<f64>,
    /// Ignore cubic damping.
    #[arg(long)]
    linear: bool,
    /// Stem of the output files.
    #[arg(long, default_value = "trial")]
    name: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Gpr,
    Quad,
    Svm,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gpr => ModelKind::Gpr,
            KindArg::Quad => ModelKind::Quad,
            KindArg::Svm => ModelKind::Svm,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    model: KindArg,
    /// h, c or mu; ignored for svm.
    #[arg(long)]
    target: Option<String>,
    /// Output model file name inside --out.
    #[arg(long, default_value = "model.txt")]
    name: String,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Marker CSV, principal-signal CSV or fit result file.
    input: Option<PathBuf>,
    #[arg(long, requires = "omega", conflicts_with = "input")]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda", conflicts_with = "input")]
    omega: Option<f64>,
}

#[derive(Args, Debug)]
struct TransferArgs {
    /// Model trained on container A.
    #[arg(long)]
    base: PathBuf,
    /// Manifest of container B.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 15)]
    tune_size: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Synthetic {
    Grooved,
    Smooth,
    Classes,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    manifest: Option<PathBuf>,
    /// Generate a simulated benchmark into <out>/data first.
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    #[arg(long, value_enum)]
    model: KindArg,
    /// Comma separated regression targets; ignored for svm.
    #[arg(long, default_value = "h,c,mu", value_delimiter = ',')]
    targets: Vec<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Uniformly subsample this many training groups.
    #[arg(long)]
    train_size: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100])]
    sizes: Vec<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// signal, regions, surface, scatter or efficiency.
    #[arg(long)]
    kind: String,
    /// Signal CSV, model file, report, or several sweep reports.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Fit result drawn over a signal.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, value_parser = parse_range, default_value = "0:2.5")]
    lambda_range: (f64, f64),
    #[arg(long, value_parser = parse_range, default_value = "8:24")]
    omega_range: (f64, f64),
    /// Grid points per axis.
    #[arg(long, default_value_t = 60)]
    resolution: usize,
    /// Stem of the output files; defaults to the kind.
    #[arg(long)]
    name: Option<String>,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<slosh_core::Error>())
        .any(|c| c.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        settings,
    };
    match cli.cmd {
        Command::Simulate(a) => ctx.simulate(a),
        Command::Preprocess { markers } => ctx.preprocess(&markers),
        Command::Fit { signal } => ctx.fit(&signal),
        Command::Train(a) => ctx.train(a),
        Command::Predict(a) => ctx.predict(a),
        Command::Classify(a) => ctx.classify(a),
        Command::Transfer(a) => ctx.transfer(a),
        Command::Bench(a) => ctx.bench(a),
        Command::Sweep(a) => ctx.sweep(a),
        Command::Plot(a) => ctx.plot(a),
    }
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    settings: Settings,
}

fn parse_target(s: &str) -> Result<Target> {
    Ok(Target::parse(s)?)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

impl Ctx {
    fn simulate(&self, a: SimulateArgs) -> Result<()> {
        let mut cfg = self.settings.sim()?;
        if let Some(v) = a.height {
            cfg.height = v;
        }
        if let Some(v) = a.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = a.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = a.length {
            cfg.length = v;
        }
        cfg.validate()?;
        let trace = if a.linear {
            simulate_linear(&cfg)?
        } else {
            simulate_nonlinear(&cfg)?
        };
        let markers = render_markers(&trace, &cfg, self.seed)?;
        let mut csv = String::from("t,eps,deps,fx,energy\n");
        for i in 0..trace.len() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                trace.t[i], trace.eps[i], trace.deps[i], trace.fx[i], trace.energy[i]
            ));
        }
        let stem = &a.name;
        cfg.save(&self.out.join(format!("{stem}.sim")))?;
        fs::write(self.out.join(format!("{stem}.trace.csv")), csv)?;
        let path = self.out.join(format!("{stem}.csv"));
        markers.save(&path)?;
        println!("wrote {}", path.display());
        if let Some(w) = cfg.linear_frequency() {
            println!("lambda_linear={}", cfg.linear_decay_rate());
            println!("omega_linear={w}");
        }
        Ok(())
    }

    fn preprocess_series(&self, series: &MarkerSeries) -> Result<PrincipalSignal> {
        let cfg = self.settings.pipeline(Default::default())?;
        let sig = preprocess(series, &cfg)?;
        if sig.low_variance {
            eprintln!(
                "warning: first principal component explains only {:.3} of the variance",
                sig.variance_ratio
            );
        }
        Ok(sig)
    }

    fn preprocess(&self, markers: &Path) -> Result<()> {
        let series = MarkerSeries::load(markers).with_context(|| format!("reading {}", markers.display()))?;
        let sig = self.preprocess_series(&series)?;
        let path = self.out.join(format!("{}.signal.csv", file_stem(markers)));
        sig.save(&path, &self.settings.pipeline(Default::default())?)?;
        println!("variance_ratio={}", sig.variance_ratio);
        println!("wrote {}", path.display());
        Ok(())
    }

    fn fit_signal(&self, sig: &PrincipalSignal) -> Result<FitResult> {
        let cfg = self.settings.fit(Default::default(), self.seed)?;
        let r = fit(sig, &cfg)?;
        if !r.converged {
            eprintln!("warning: fit did not converge");
        }
        Ok(r)
    }

    fn fit(&self, signal: &Path) -> Result<()> {
        let sig = PrincipalSignal::load(signal).with_context(|| format!("reading {}", signal.display()))?;
        let r = self.fit_signal(&sig)?;
        let stem = file_stem(signal);
        let stem = stem.strip_suffix(".signal").unwrap_or(&stem);
        let path = self.out.join(format!("{stem}.fit"));
        r.save(&path)?;
        print!("{}", r.to_kv().to_text());
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Features from `--lambda/--omega` or from a marker, signal or fit file.
    fn features(&self, a: &PredictArgs) -> Result<FeatureVector> {
        if let (Some(l), Some(w)) = (a.lambda, a.omega) {
            let x = FeatureVector::new(l, w);
            x.validate()?;
            return Ok(x);
        }
        let Some(path) = &a.input else {
            bail!(slosh_core::Error::Invalid("give an input file or --lambda and --omega".into()));
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let header = text.lines().next().unwrap_or("").trim();
        let x = if header == "t,u" {
            self.fit_signal(&PrincipalSignal::load(path)?)?.features
        } else if header.starts_with("t,m0x") {
            let sig = self.preprocess_series(&MarkerSeries::from_csv(&text)?)?;
            self.fit_signal(&sig)?.features
        } else {
            FitResult::load(path)?.features
        };
        x.validate()?;
        Ok(x)
    }

    fn train(&self, a: TrainArgs) -> Result<()> {
        let manifest = Manifest::load(&a.manifest)?;
        let cfg = self.settings.bench(BenchConfig::default(), self.seed)?;
        let table = extract_features(&manifest, &cfg.pipeline, &cfg.fit)?;
        let train = table.split(Split::Train);
        let xs: Vec<FeatureVector> = train.iter().map(|g| g.features).collect();
        let kind: ModelKind = a.model.into();
        let model = if kind == ModelKind::Svm {
            let ys = train
                .iter()
                .map(|g| g.label.class_id.with_context(|| format!("group {} has no class label", g.group)))
                .collect::<Result<Vec<u32>>>()
                .map_err(|e| slosh_core::Error::Invalid(e.to_string()))?;
            Model::Svm(slosh_core::models::svm_train_with(&xs, &ys, &cfg.svm)?)
        } else {
            let Some(t) = &a.target else {
                bail!(slosh_core::Error::Invalid("--target is required for regression models".into()));
            };
            let target = parse_target(t)?;
            let ys = train
                .iter()
                .map(|g| {
                    target
                        .get(&g.label)
                        .ok_or_else(|| slosh_core::Error::Invalid(format!("group {} has no {t} label", g.group)))
                })
                .collect::<std::result::Result<Vec<f64>, _>>()?;
            train_regressor(kind, &xs, &ys, &cfg)?
        };
        let path = self.out.join(&a.name);
        save_model(&model, &path)?;
        println!("trained {} on {} groups ({} dropped)", model.kind(), xs.len(), table.dropped.len());
        println!("wrote {}", path.display());
        Ok(())
    }

    fn predict(&self, a: PredictArgs) -> Result<()> {
        let model = load_model(&a.model)?;
        let x = self.features(&a)?;
        println!("lambda={}", x.lambda);
        println!("omega={}", x.omega);
        match &model {
            Model::Gpr(m) => {
                let (mean, std) = m.predict_with_std(&x);
                println!("prediction={mean}");
                println!("std={std}");
            }
            Model::Svm(_) => bail!(slosh_core::Error::Invalid("svm models predict classes; use classify".into())),
            m => println!("prediction={}", m.predict_value(&x)?),
        }
        Ok(())
    }

    fn classify(&self, a: PredictArgs) -> Result<()> {
        let Model::Svm(model) = load_model(&a.model)? else {
            bail!(slosh_core::Error::Invalid("classify needs an svm model".into()));
        };
        let x = self.features(&a)?;
        println!("lambda={}", x.lambda);
        println!("omega={}", x.omega);
        println!("class={}", model.predict(&x));
        Ok(())
    }

    fn transfer(&self, a: TransferArgs) -> Result<()> {
        let base = load_model(&a.base)?;
        let target = parse_target(&a.target)?;
        let manifest = Manifest::load(&a.manifest)?;
        let cfg = self.settings.bench(BenchConfig::default(), self.seed)?;
        let table = extract_features(&manifest, &cfg.pipeline, &cfg.fit)?;
        let (report, map) = transfer_benchmark(&base, &table, target, a.tune_size, &cfg, self.seed)?;
        let text = report.to_text();
        fs::write(self.out.join("transfer.txt"), &text)?;
        save_model(&Model::Xfer(map), &self.out.join("xfer-model.txt"))?;
        print!("{text}");
        Ok(())
    }

    /// Manifest and settings for `bench` and `sweep`.
    fn dataset(&self, d: &DataArgs) -> Result<(Manifest, BenchConfig)> {
        if let Some(m) = &d.manifest {
            let cfg = self.settings.bench(BenchConfig::default(), self.seed)?;
            return Ok((Manifest::load(m)?, cfg));
        }
        let dir = self.out.join("data");
        let manifest = match d.synthetic.expect("clap requires one of the two") {
            Synthetic::Grooved => generate_regression(&RegressionBench::grooved(), &dir, self.seed)?,
            Synthetic::Smooth => generate_regression(&RegressionBench::smooth(), &dir, self.seed)?,
            Synthetic::Classes => generate_classification(&ClassBench::three_liquids(), &dir, self.seed)?,
        };
        let cfg = self.settings.bench(BenchConfig::synthetic(), self.seed)?;
        Ok((manifest, cfg))
    }

    fn task(d: &DataArgs) -> Result<Task> {
        if matches!(d.model, KindArg::Svm) {
            return Ok(Task::Classification);
        }
        let targets = d.targets.iter().map(|t| parse_target(t)).collect::<Result<Vec<_>>>()?;
        Ok(Task::Regression(targets))
    }

    fn bench(&self, a: BenchArgs) -> Result<()> {
        let (manifest, mut cfg) = self.dataset(&a.data)?;
        cfg.train_size = a.train_size;
        let task = Self::task(&a.data)?;
        let report = run_benchmark(&manifest, &task, a.data.model.into(), &cfg, self.seed)?;
        let path = self.out.join("report.txt");
        report.save(&path)?;
        summarize(&report);
        println!("wrote {}", path.display());
        Ok(())
    }

    fn sweep(&self, a: SweepArgs) -> Result<()> {
        let (manifest, cfg) = self.dataset(&a.data)?;
        let task = Self::task(&a.data)?;
        let reports = sweep(&manifest, &task, a.data.model.into(), &cfg, &a.sizes, self.seed)?;
        for r in &reports {
            let path = self.out.join(format!("report-{:03}.txt", r.train_size));
            r.save(&path)?;
            println!("train_size={}", r.train_size);
            summarize(r);
        }
        Ok(())
    }

    fn plot(&self, a: PlotArgs) -> Result<()> {
        let kind = PlotKind::parse(&a.kind)?;
        let grid = GridSpec {
            lambda: a.lambda_range,
            omega: a.omega_range,
            n_lambda: a.resolution,
            n_omega: a.resolution,
        };
        let stem = a.name.clone().unwrap_or_else(|| kind.name().to_string());
        let single = || -> Result<&PathBuf> {
            match a.inputs.as_slice() {
                [p] => Ok(p),
                _ => bail!(slosh_core::Error::Invalid(format!("{} plot takes one input", kind.name()))),
            }
        };
        let files = match kind {
            PlotKind::Signal => {
                let sig = PrincipalSignal::load(single()?)?;
                let fit = a.fit.as_deref().map(FitResult::load).transpose()?;
                emit_plotdata(PlotSource::Signal(&sig, fit.as_ref()), kind.name(), &grid, &self.out, &stem)?
            }
            PlotKind::Regions | PlotKind::Surface => {
                let model = load_model(single()?)?;
                emit_plotdata(PlotSource::Model(&model), kind.name(), &grid, &self.out, &stem)?
            }
            PlotKind::Scatter => {
                let r = EvalReport::load(single()?)?;
                emit_plotdata(PlotSource::Report(&r), kind.name(), &grid, &self.out, &stem)?
            }
            PlotKind::Efficiency => {
                let rs = a.inputs.iter().map(|p| EvalReport::load(p)).collect::<slosh_core::Result<Vec<_>>>()?;
                emit_plotdata(PlotSource::Sweep(&rs), kind.name(), &grid, &self.out, &stem)?
            }
        };
        println!("wrote {}", files.svg.display());
        println!("wrote {}", files.table.display());
        Ok(())
    }
}

fn summarize(r: &EvalReport) {
    println!(
        "groups: {} train, {} test, {} dropped",
        r.n_train_groups, r.n_test_groups, r.n_dropped
    );
    for m in &r.metrics {
        let frac = if m.range > 0.0 { m.mae / m.range } else { f64::NAN };
        println!("{}: mae={} mse={} mae/range={:.4}", m.target.name(), m.mae, m.mse, frac);
    }
    if let Some(c) = &r.confusion {
        println!("accuracy={}", c.accuracy());
    }
}
