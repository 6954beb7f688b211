//! Figure data: an SVG rendering plus a plain-text table per figure.
//!
//! Kinds:
//!
//! - `signal`: principal signal `u(t)`, with the fitted model if given.
//! - `regions`: classifier decision regions on a `(lambda, omega)` grid.
//! - `surface`: regressor values on a `(lambda, omega)` grid.
//! - `scatter`: held-out predictions against truth.
//! - `efficiency`: held-out MAE against training-set size.
//!
//! Grid tables hold one `lambda omega value` row per cell, with lambda
//! varying fastest. All content is built in memory before anything is
//! written, so a failed call leaves no files behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::EvalReport;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::models::{FeatureVector, Model};
use crate::signal::PrincipalSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Signal,
    Regions,
    Surface,
    Scatter,
    Efficiency,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [
        PlotKind::Signal,
        PlotKind::Regions,
        PlotKind::Surface,
        PlotKind::Scatter,
        PlotKind::Efficiency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Signal => "signal",
            PlotKind::Regions => "regions",
            PlotKind::Surface => "surface",
            PlotKind::Scatter => "scatter",
            PlotKind::Efficiency => "efficiency",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown plot kind {s:?}")))
    }
}

/// What a figure is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Signal(&'a PrincipalSignal, Option<&'a FitResult>),
    Model(&'a Model),
    Report(&'a EvalReport),
    /// Reports of a training-size sweep.
    Sweep(&'a [EvalReport]),
}

/// Grid for the model figures.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lambda: (f64, f64),
    pub omega: (f64, f64),
    pub n_lambda: usize,
    pub n_omega: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda: (0.0, 2.5),
            omega: (8.0, 24.0),
            n_lambda: 60,
            n_omega: 60,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !ok(self.lambda) || !ok(self.omega) {
            return Err(Error::invalid("grid ranges must be finite with min < max"));
        }
        if self.n_lambda < 2 || self.n_omega < 2 {
            return Err(Error::invalid("grid needs at least 2 points per axis"));
        }
        Ok(())
    }

    /// Cell centres in table order (lambda fastest).
    pub fn points(&self) -> Vec<FeatureVector> {
        let lin = |(a, b): (f64, f64), n: usize, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
        let mut out = Vec::with_capacity(self.n_lambda * self.n_omega);
        for j in 0..self.n_omega {
            let w = lin(self.omega, self.n_omega, j);
            for i in 0..self.n_lambda {
                out.push(FeatureVector::new(lin(self.lambda, self.n_lambda, i), w));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub svg: PathBuf,
    pub table: PathBuf,
}

/// Renders `kind` from `source` into `<dir>/<stem>.svg` and `<dir>/<stem>.tsv`.
pub fn emit_plotdata(
    source: PlotSource<'_>,
    kind: &str,
    grid: &GridSpec,
    dir: &Path,
    stem: &str,
) -> Result<PlotFiles> {
    let kind = PlotKind::parse(kind)?;
    let (svg, table) = render(source, kind, grid)?;
    fs::create_dir_all(dir)?;
    let files = PlotFiles {
        svg: dir.join(format!("{stem}.svg")),
        table: dir.join(format!("{stem}.tsv")),
    };
    fs::write(&files.table, table)?;
    if let Err(e) = fs::write(&files.svg, svg) {
        let _ = fs::remove_file(&files.table);
        return Err(e.into());
    }
    Ok(files)
}

/// The SVG text and the data table, without touching the filesystem.
pub fn render(source: PlotSource<'_>, kind: PlotKind, grid: &GridSpec) -> Result<(String, String)> {
    match (kind, source) {
        (PlotKind::Signal, PlotSource::Signal(s, fit)) => signal_plot(s, fit),
        (PlotKind::Regions, PlotSource::Model(Model::Svm(m))) => {
            grid.validate()?;
            let pts = grid.points();
            let v: Vec<f64> = pts.iter().map(|x| m.predict(x) as f64).collect();
            Ok(grid_plot(grid, &pts, &v, true, "decision regions"))
        }
        (PlotKind::Regions, PlotSource::Model(_)) => Err(Error::invalid("decision regions need a classifier")),
        (PlotKind::Surface, PlotSource::Model(m)) => {
            if !m.is_regressor() {
                return Err(Error::invalid("surface plots need a regressor"));
            }
            grid.validate()?;
            let pts = grid.points();
            let v = pts.iter().map(|x| m.predict_value(x)).collect::<Result<Vec<_>>>()?;
            Ok(grid_plot(grid, &pts, &v, false, &format!("{} surface", m.kind())))
        }
        (PlotKind::Scatter, PlotSource::Report(r)) => scatter_plot(r),
        (PlotKind::Efficiency, PlotSource::Sweep(rs)) => efficiency_plot(rs),
        (k, _) => Err(Error::invalid(format!("{} plot cannot be drawn from this input", k.name()))),
    }
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Linear data-to-pixel mapping for one panel.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 14.0, esc(xlabel));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(ylabel)
        );
        s
    }

    fn close(&self, mut s: String) -> String {
        let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{}" stroke="black"/>"#, y1 + 5.0);
            let _ = writeln!(s, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, tick(xv));
            let _ = writeln!(s, r#"<line x1="{}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, tick(yv));
        }
        s.push_str("</svg>\n");
        s
    }

    fn polyline(&self, s: &mut String, xs: &[f64], ys: &[f64], color: &str, width: f64) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            pts.join(" ")
        );
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn span(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    v.into_iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn signal_plot(s: &PrincipalSignal, fit: Option<&FitResult>) -> Result<(String, String)> {
    if s.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    let model: Option<Vec<f64>> = fit.map(|f| s.t.iter().map(|&t| f.params.eval_at(t)).collect());
    let mut table = String::from(if model.is_some() { "t\tu\tfit\n" } else { "t\tu\n" });
    for i in 0..s.len() {
        let _ = write!(table, "{}\t{}", s.t[i], s.u[i]);
        if let Some(m) = &model {
            let _ = write!(table, "\t{}", m[i]);
        }
        table.push('\n');
    }
    let yr = span(s.u.iter().copied().chain(model.iter().flatten().copied()));
    let f = Frame::new((s.t[0], s.t[s.len() - 1]), yr);
    let mut svg = f.open("principal signal", "t (s)", "u");
    f.polyline(&mut svg, &s.t, &s.u, PALETTE[7], 1.0);
    if let Some(m) = &model {
        f.polyline(&mut svg, &s.t, m, PALETTE[1], 1.5);
    }
    Ok((f.close(svg), table))
}

/// Maps `v` in `[0, 1]` to a blue-to-yellow ramp.
fn ramp(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(0x30, 0xfd), lerp(0x12, 0xe7), lerp(0x70, 0x25))
}

fn grid_plot(grid: &GridSpec, pts: &[FeatureVector], v: &[f64], classes: bool, title: &str) -> (String, String) {
    let mut table = String::from("lambda\tomega\tvalue\n");
    for (p, val) in pts.iter().zip(v) {
        if classes {
            let _ = writeln!(table, "{}\t{}\t{}", p.lambda, p.omega, *val as u32);
        } else {
            let _ = writeln!(table, "{}\t{}\t{}", p.lambda, p.omega, val);
        }
    }
    let f = Frame::new(grid.lambda, grid.omega);
    let mut svg = f.open(title, "lambda (1/s)", "omega (rad/s)");
    let dl = (grid.lambda.1 - grid.lambda.0) / (grid.n_lambda - 1) as f64;
    let dw = (grid.omega.1 - grid.omega.0) / (grid.n_omega - 1) as f64;
    let (lo, hi) = span(v.iter().copied());
    for (p, &val) in pts.iter().zip(v) {
        let color = if classes {
            PALETTE[val as usize % PALETTE.len()].to_string()
        } else {
            ramp(if hi > lo { (val - lo) / (hi - lo) } else { 0.5 })
        };
        let l0 = (p.lambda - dl / 2.0).max(grid.lambda.0);
        let l1 = (p.lambda + dl / 2.0).min(grid.lambda.1);
        let w0 = (p.omega - dw / 2.0).max(grid.omega.0);
        let w1 = (p.omega + dw / 2.0).min(grid.omega.1);
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" stroke="none"/>"#,
            f.px(l0),
            f.py(w1),
            f.px(l1) - f.px(l0),
            f.py(w0) - f.py(w1)
        );
    }
    (f.close(svg), table)
}

fn scatter_plot(r: &EvalReport) -> Result<(String, String)> {
    if r.predictions.is_empty() {
        return Err(Error::invalid("report has no predictions"));
    }
    let mut table = String::from("group\ttarget\ttruth\tpred\n");
    for p in &r.predictions {
        let _ = writeln!(table, "{}\t{}\t{}\t{}", p.group, p.target, p.truth, p.pred);
    }
    let mut targets: Vec<&str> = r.predictions.iter().map(|p| p.target.as_str()).collect();
    targets.dedup();
    let (lo, hi) = span(r.predictions.iter().flat_map(|p| [p.truth, p.pred]));
    let f = Frame::new((lo, hi), (lo, hi));
    let mut svg = f.open(&format!("{} predictions", r.model.name()), "truth", "prediction");
    f.polyline(&mut svg, &[lo, hi], &[lo, hi], "#999999", 1.0);
    for p in &r.predictions {
        let k = targets.iter().position(|t| *t == p.target).unwrap_or(0);
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            f.px(p.truth),
            f.py(p.pred),
            PALETTE[k % PALETTE.len()]
        );
    }
    Ok((f.close(svg), table))
}

fn efficiency_plot(rs: &[EvalReport]) -> Result<(String, String)> {
    if rs.is_empty() {
        return Err(Error::invalid("no sweep reports"));
    }
    let mut targets = Vec::new();
    for r in rs {
        for m in &r.metrics {
            if !targets.contains(&m.target) {
                targets.push(m.target);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::invalid("sweep reports carry no regression metrics"));
    }
    let mut table = String::from("train_size\ttarget\tmae\tmae_frac\n");
    let mut series = Vec::new();
    for &t in &targets {
        let mut pts: Vec<(f64, f64)> = rs
            .iter()
            .filter_map(|r| r.metric(t).map(|m| (r.train_size as f64, m.mae, m.range)))
            .map(|(n, mae, range)| {
                let frac = if range > 0.0 { mae / range } else { f64::NAN };
                let _ = writeln!(table, "{}\t{}\t{}\t{}", n, t.name(), mae, frac);
                (n, frac)
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(pts);
    }
    let xr = span(series.iter().flatten().map(|p| p.0));
    let yr = span(series.iter().flatten().map(|p| p.1).chain([0.0]));
    let f = Frame::new(xr, yr);
    let mut svg = f.open("data efficiency", "training groups", "MAE / range");
    for (k, pts) in series.iter().enumerate() {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let color = PALETTE[k % PALETTE.len()];
        f.polyline(&mut svg, &xs, &ys, color, 1.5);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN - 40.0,
            MARGIN + 16.0 * (k + 1) as f64,
            targets[k].name()
        );
    }
    Ok((f.close(svg), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{svm_train, QuadModel};

    fn read_grid(text: &str) -> Vec<(f64, f64, String)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string())
            })
            .collect()
    }

    #[test]
    fn decision_regions_have_one_class_per_cell() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, (l, w)) in [(0.2, 10.0), (1.0, 15.0), (2.0, 20.0)].into_iter().enumerate() {
            for d in 0..6 {
                xs.push(FeatureVector::new(l + 0.02 * d as f64, w + 0.1 * d as f64));
                ys.push(k as u32);
            }
        }
        let m = Model::Svm(svm_train(&xs, &ys, 10.0, None).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec {
            n_lambda: 7,
            n_omega: 5,
            ..Default::default()
        };
        let files = emit_plotdata(PlotSource::Model(&m), "regions", &g, dir.path(), "r").unwrap();
        let rows = read_grid(&fs::read_to_string(&files.table).unwrap());
        assert_eq!(rows.len(), 35);
        for (_, _, c) in &rows {
            let id: u32 = c.parse().unwrap();
            assert!(id < 3);
        }
        assert!(fs::read_to_string(&files.svg).unwrap().starts_with("<svg"));
    }

    #[test]
    fn quadratic_surface_matches_closed_form() {
        let (l, g) = (0.1, 9.81);
        let k = l * l / (12.0 * g);
        let m = Model::Quad(QuadModel {
            coef: [0.0, 0.0, 0.0, k, 0.0, k],
        });
        let grid = GridSpec::default();
        let (_, table) = render(PlotSource::Model(&m), PlotKind::Surface, &grid).unwrap();
        let rows = read_grid(&table);
        assert_eq!(rows.len(), 3600);
        for (lam, w, v) in rows {
            let v: f64 = v.parse().unwrap();
            assert!((v - k * (w * w + lam * lam)).abs() <= 1e-9);
        }
    }

    #[test]
    fn failures_leave_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::Quad(QuadModel { coef: [1.0; 6] });
        let g = GridSpec::default();
        assert!(emit_plotdata(PlotSource::Model(&m), "contour", &g, dir.path(), "x").is_err());
        assert!(emit_plotdata(PlotSource::Model(&m), "regions", &g, dir.path(), "x").is_err());
        let empty: [EvalReport; 0] = [];
        assert!(emit_plotdata(PlotSource::Sweep(&empty), "efficiency", &g, dir.path(), "x").is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn signal_table_carries_fit() {
        let t: Vec<f64> = (0..60).map(|i| i as f64 / 30.0).collect();
        let u: Vec<f64> = t.iter().map(|t| (10.0 * t).cos()).collect();
        let s = PrincipalSignal::from_samples(30.0, t, u).unwrap();
        let (svg, table) = render(PlotSource::Signal(&s, None), PlotKind::Signal, &GridSpec::default()).unwrap();
        assert_eq!(table.lines().count(), 61);
        assert!(svg.contains("polyline"));
    }
}
