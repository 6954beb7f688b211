//! Marker recording to 1-D oscillation signal: zero-phase low-pass filter,
//! top-k marker selection by RMS magnitude, and projection onto the first
//! principal component.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kv::{KvMap, KvWriter};
use crate::sim::{sample_rate_from_times, MarkerSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cutoff_hz: f64,
    pub top_k: usize,
    /// A first principal component explaining less than this raises the warning flag.
    pub min_variance_ratio: f64,
    /// Butterworth order of each filter pass (even); the zero-phase result has twice this order.
    pub filter_order: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 3.0,
            top_k: 16,
            min_variance_ratio: 0.90,
            filter_order: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_hz.is_finite() && self.cutoff_hz > 0.0) {
            return Err(Error::invalid("cutoff_hz must be > 0"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.min_variance_ratio) {
            return Err(Error::invalid("min_variance_ratio must lie in [0, 1]"));
        }
        if self.filter_order == 0 || self.filter_order % 2 != 0 {
            return Err(Error::invalid("filter_order must be even and >= 2"));
        }
        Ok(())
    }

    /// Overrides defaults with the keys present in `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        reject_unknown(kv, &["cutoff_hz", "top_k", "min_variance_ratio", "filter_order"])?;
        let d = Self::default();
        let cfg = Self {
            cutoff_hz: kv.get("cutoff_hz")?.unwrap_or(d.cutoff_hz),
            top_k: kv.get("top_k")?.unwrap_or(d.top_k),
            min_variance_ratio: kv.get("min_variance_ratio")?.unwrap_or(d.min_variance_ratio),
            filter_order: kv.get("filter_order")?.unwrap_or(d.filter_order),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn reject_unknown(kv: &KvMap, known: &[&str]) -> Result<()> {
    match kv.keys().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::invalid(format!("unknown config key {k:?}"))),
        None => Ok(()),
    }
}

/// The de-noised oscillation signal `u(t)` with PCA diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalSignal {
    pub sample_rate: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    /// Fraction of total variance explained by the first principal component.
    pub variance_ratio: f64,
    /// Unit vector over the kept marker channels.
    pub principal_direction: Vec<f64>,
    /// Set by [`preprocess`] when `variance_ratio < min_variance_ratio`.
    pub low_variance: bool,
}

impl PrincipalSignal {
    /// Wraps a bare signal (no PCA provenance).
    pub fn from_samples(sample_rate: f64, t: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if t.len() != u.len() || t.is_empty() {
            return Err(Error::invalid("signal needs matching, nonempty t and u"));
        }
        if t.iter().chain(&u).any(|v| !v.is_finite()) || !(sample_rate > 0.0) {
            return Err(Error::invalid("signal contains non-finite values"));
        }
        Ok(Self {
            sample_rate,
            t,
            u,
            variance_ratio: 1.0,
            principal_direction: Vec::new(),
            low_variance: false,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,u\n");
        for (t, u) in self.t.iter().zip(&self.u) {
            let _ = writeln!(out, "{t},{u}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t,u" => {}
            _ => return Err(Error::parse(1, "header must be t,u")),
        }
        let (mut t, mut u) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(i + 1, "expected two fields"))?;
            let pa = a.trim().parse::<f64>();
            let pb = b.trim().parse::<f64>();
            match (pa, pb) {
                (Ok(a), Ok(b)) => {
                    t.push(a);
                    u.push(b);
                }
                _ => return Err(Error::parse(i + 1, "bad number")),
            }
        }
        let fs = sample_rate_from_times(&t)?;
        Self::from_samples(fs, t, u)
    }

    /// Sidecar metadata written next to the CSV.
    pub fn metadata(&self, cfg: &PipelineConfig) -> KvWriter {
        let dir = self
            .principal_direction
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut w = KvWriter::new();
        w.put("variance_ratio", self.variance_ratio)
            .put("cutoff", cfg.cutoff_hz)
            .put("k", cfg.top_k)
            .put("sample_rate", self.sample_rate)
            .put("low_variance", self.low_variance)
            .put("principal_direction", dir);
        w
    }

    /// Writes `<stem>.csv` and `<stem>.meta`.
    pub fn save(&self, csv_path: &Path, cfg: &PipelineConfig) -> Result<()> {
        fs::write(csv_path, self.to_csv())?;
        self.metadata(cfg).write(&csv_path.with_extension("meta"))
    }

    /// Reads the CSV and, if present, its `.meta` sidecar.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let mut sig = Self::from_csv(&fs::read_to_string(csv_path)?)?;
        let meta = csv_path.with_extension("meta");
        if meta.exists() {
            let kv = KvMap::read(&meta)?;
            if let Some(v) = kv.get("variance_ratio")? {
                sig.variance_ratio = v;
            }
            if let Some(v) = kv.get("low_variance")? {
                sig.low_variance = v;
            }
            if let Some(d) = kv.get_str("principal_direction").filter(|d| !d.is_empty()) {
                sig.principal_direction = d
                    .split(',')
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::invalid("bad principal_direction in sidecar"))?;
            }
        }
        Ok(sig)
    }
}

/// Second-order section, transposed direct form II coefficients (`a0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Runs the section in place starting from the steady state for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth low-pass of even `order` as cascaded biquads, designed by the
/// bilinear transform with frequency prewarping.
pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Vec<Biquad>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::invalid(format!("filter order must be even and > 0, got {order}")));
    }
    let nyquist = 0.5 * sample_rate;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    let k = (PI * cutoff_hz / sample_rate).tan();
    let k2 = k * k;
    Ok((0..order / 2)
        .map(|i| {
            let theta = (2 * i + 1) as f64 * PI / (2 * order) as f64;
            let inv_q = 2.0 * theta.sin();
            let norm = 1.0 / (1.0 + k * inv_q + k2);
            let b0 = k2 * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k2 - 1.0) * norm, (1.0 - k * inv_q + k2) * norm],
            }
        })
        .collect())
}

/// Edge padding for the forward-backward pass: three time constants of the
/// slowest filter pole, at least `3 (order + 1)` samples.
fn pad_len(order: usize, cutoff_hz: f64, sample_rate: f64) -> usize {
    let slowest = 2.0 * PI * cutoff_hz * (PI / (2 * order) as f64).sin();
    let tau_samples = sample_rate / slowest;
    ((3.0 * tau_samples).ceil() as usize).max(3 * (order + 1))
}

/// Zero-phase filtering of one channel with odd-reflection edge padding.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase low-pass (default order) on every marker channel.
pub fn lowpass(series: &MarkerSeries, cutoff_hz: f64) -> Result<MarkerSeries> {
    lowpass_with_order(series, cutoff_hz, PipelineConfig::default().filter_order)
}

pub fn lowpass_with_order(series: &MarkerSeries, cutoff_hz: f64, order: usize) -> Result<MarkerSeries> {
    series.validate()?;
    let sections = butterworth_lowpass(order, cutoff_hz, series.sample_rate)?;
    let pad = pad_len(order, cutoff_hz, series.sample_rate);
    let channels: Vec<Vec<f64>> = (0..2 * series.n_markers())
        .map(|c| filtfilt(&sections, &series.channel(c), pad))
        .collect();
    MarkerSeries::from_channels(series.sample_rate, series.t.clone(), &channels)
}

/// RMS of the 2-D displacement magnitude of every marker.
pub fn marker_rms(series: &MarkerSeries) -> Vec<f64> {
    let n = series.n_samples().max(1) as f64;
    (0..series.n_markers())
        .map(|i| {
            let ss: f64 = series
                .disp
                .iter()
                .map(|r| r[2 * i] * r[2 * i] + r[2 * i + 1] * r[2 * i + 1])
                .sum();
            (ss / n).sqrt()
        })
        .collect()
}

/// Indices (ascending) of the `k` markers with the largest RMS magnitude.
/// Ties favour the lower index.
pub fn top_marker_indices(series: &MarkerSeries, k: usize) -> Result<Vec<usize>> {
    let m = series.n_markers();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("cannot keep {k} of {m} markers")));
    }
    let rms = marker_rms(series);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| rms[b].total_cmp(&rms[a]).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

pub fn select_top_markers(series: &MarkerSeries, k: usize) -> Result<MarkerSeries> {
    series.validate()?;
    let keep = top_marker_indices(series, k)?;
    let disp = series
        .disp
        .iter()
        .map(|r| keep.iter().flat_map(|&i| [r[2 * i], r[2 * i + 1]]).collect())
        .collect();
    MarkerSeries::new(series.sample_rate, series.t.clone(), disp)
}

/// Mean-centred copy of the displacement matrix (samples x channels).
fn centered(series: &MarkerSeries) -> DMatrix<f64> {
    let (n, d) = (series.n_samples(), 2 * series.n_markers());
    let mut x = DMatrix::from_fn(n, d, |i, j| series.disp[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    x
}

/// Projects the centred marker motion onto its first principal direction.
///
/// The direction's sign is chosen so the largest-magnitude sample of `u`
/// (earliest one on ties) is positive.
pub fn principal_motion(series: &MarkerSeries) -> Result<PrincipalSignal> {
    series.validate()?;
    if series.n_samples() < 2 {
        return Err(Error::invalid("principal motion needs at least 2 samples"));
    }
    let x = centered(series);
    let cov = x.transpose() * &x / (series.n_samples() - 1) as f64;
    let total = cov.trace();
    let scale = series
        .disp
        .iter()
        .flatten()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(total > 1e-24 * scale * scale) || total == 0.0 {
        return Err(Error::invalid("degenerate marker motion (no variance)"));
    }
    let eig = SymmetricEigen::new(cov);
    let (top, &lambda1) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one channel");
    let mut dir: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut u: Vec<f64> = (0..x.nrows())
        .map(|i| x.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum())
        .collect();
    let mut peak = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[peak].abs() {
            peak = i;
        }
    }
    if u[peak] < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
        dir.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(PrincipalSignal {
        sample_rate: series.sample_rate,
        t: series.t.clone(),
        u,
        variance_ratio: (lambda1 / total).clamp(0.0, 1.0),
        principal_direction: dir,
        low_variance: false,
    })
}

/// Low-pass, marker selection and PCA in sequence.
pub fn preprocess(series: &MarkerSeries, cfg: &PipelineConfig) -> Result<PrincipalSignal> {
    cfg.validate()?;
    if cfg.top_k == 0 || cfg.top_k > series.n_markers() {
        return Err(Error::invalid(format!(
            "top_k = {} but the series has {} markers",
            cfg.top_k,
            series.n_markers()
        )));
    }
    let filtered = lowpass_with_order(series, cfg.cutoff_hz, cfg.filter_order)?;
    let selected = select_top_markers(&filtered, cfg.top_k)?;
    let mut sig = principal_motion(&selected)?;
    sig.low_variance = sig.variance_ratio < cfg.min_variance_ratio;
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{record, render_markers, simulate_linear, SimConfig};

    fn series_from(fs: f64, chans: &[Vec<f64>]) -> MarkerSeries {
        let n = chans[0].len();
        let t = (0..n).map(|k| k as f64 / fs).collect();
        MarkerSeries::from_channels(fs, t, chans).unwrap()
    }

    fn sine(fs: f64, f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 / fs).sin()).collect()
    }

    #[test]
    fn sections_have_unit_dc_gain() {
        for order in [2, 4, 6] {
            for s in butterworth_lowpass(order, 3.0, 30.0).unwrap() {
                assert!((s.dc_gain() - 1.0).abs() < 1e-12);
            }
        }
        assert!(butterworth_lowpass(3, 3.0, 30.0).is_err());
    }

    #[test]
    fn constant_passes_unchanged() {
        let s = series_from(30.0, &[vec![2.5; 200], vec![-1.0; 200]]);
        let f = lowpass(&s, 3.0).unwrap();
        for row in &f.disp {
            assert!((row[0] - 2.5).abs() < 1e-6 && (row[1] + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_rejected() {
        let s = series_from(30.0, &[vec![0.0; 50], vec![0.0; 50]]);
        assert!(lowpass(&s, 15.0).is_err());
        assert!(lowpass(&s, 20.0).is_err());
        assert!(lowpass(&s, 0.0).is_err());
        assert!(lowpass(&s, 14.9).is_ok());
    }

    #[test]
    fn zero_phase_in_band_sinusoid() {
        let x = sine(30.0, 1.0, 600);
        let s = series_from(30.0, &[x.clone(), vec![0.0; 600]]);
        let y = lowpass(&s, 3.0).unwrap().channel(0);
        // cross-correlation peak over the interior sits at lag 0
        let inner = 100..500;
        let xc = |lag: i64| -> f64 {
            inner
                .clone()
                .map(|k| x[k] * y[(k as i64 + lag) as usize])
                .sum()
        };
        let best = (-10..=10).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn selects_dominant_marker() {
        let base = sine(30.0, 1.0, 100);
        let big: Vec<f64> = base.iter().map(|v| 100.0 * v).collect();
        let s = series_from(30.0, &[base.clone(), base.clone(), big, base.clone(), base.clone(), base]);
        assert_eq!(top_marker_indices(&s, 1).unwrap(), vec![1]);
        let kept = select_top_markers(&s, 1).unwrap();
        assert_eq!(kept.n_markers(), 1);
        assert_eq!(kept.channel(0), s.channel(2));
        assert_eq!(select_top_markers(&s, 3).unwrap(), s);
        assert!(select_top_markers(&s, 4).is_err());
        assert!(select_top_markers(&s, 0).is_err());
    }

    #[test]
    fn top_k_matches_largest_gains() {
        let cfg = SimConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        let tr = simulate_linear(&cfg).unwrap();
        let ms = render_markers(&tr, &cfg, 11).unwrap();
        let geom = {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            crate::sim::MarkerGeometry::draw(&cfg, &mut rng)
        };
        let mut by_gain: Vec<usize> = (0..cfg.n_markers).collect();
        by_gain.sort_by(|&a, &b| geom.gains[b].total_cmp(&geom.gains[a]));
        let mut want = by_gain[..16].to_vec();
        want.sort_unstable();
        assert_eq!(top_marker_indices(&ms, 16).unwrap(), want);
    }

    #[test]
    fn single_axis_marker_pca() {
        let x = sine(30.0, 1.3, 120);
        let s = series_from(30.0, &[x.clone(), vec![0.0; 120]]);
        let p = principal_motion(&s).unwrap();
        assert!((p.variance_ratio - 1.0).abs() < 1e-12);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sign = p.principal_direction[0].signum();
        for (a, b) in p.u.iter().zip(&x) {
            assert!((a - sign * (b - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_data_explains_all_variance() {
        let w: Vec<f64> = (0..200)
            .map(|k| (-0.3 * k as f64 / 30.0).exp() * (2.0 * k as f64 / 30.0).cos())
            .collect();
        let gains = [1.0, -0.5, 2.0, 0.3, 1.7, 0.9];
        let chans: Vec<Vec<f64>> = gains.iter().map(|g| w.iter().map(|v| g * v).collect()).collect();
        let p = principal_motion(&series_from(30.0, &chans)).unwrap();
        assert!((p.variance_ratio - 1.0).abs() < 1e-9);
        let norm: f64 = p.principal_direction.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let s = series_from(30.0, &[vec![0.0; 40], vec![0.0; 40]]);
        assert!(principal_motion(&s).is_err());
        let c = series_from(30.0, &[vec![3.0; 40], vec![1.0; 40]]);
        assert!(principal_motion(&c).is_err());
    }

    #[test]
    fn default_render_first_pc_above_ninety_percent() {
        for seed in 0..5 {
            let ms = record(&SimConfig::default(), seed).unwrap();
            let p = preprocess(&ms, &PipelineConfig::default()).unwrap();
            assert!(p.variance_ratio >= 0.90, "seed {seed}: {}", p.variance_ratio);
            assert!(!p.low_variance);
        }
    }

    #[test]
    fn noise_only_input_raises_warning() {
        let cfg = SimConfig {
            eps0: 0.0,
            noise_std: 0.01,
            ..Default::default()
        };
        let ms = record(&cfg, 5).unwrap();
        let p = preprocess(&ms, &PipelineConfig::default()).unwrap();
        assert!(p.low_variance, "ratio {}", p.variance_ratio);
    }

    #[test]
    fn preprocess_near_identity_matches_pca() {
        let cfg = SimConfig {
            n_markers: 8,
            ..Default::default()
        };
        let ms = record(&cfg, 2).unwrap();
        let pc = PipelineConfig {
            cutoff_hz: 0.99 * 15.0,
            top_k: 8,
            ..Default::default()
        };
        let a = preprocess(&ms, &pc).unwrap();
        let b = principal_motion(&ms).unwrap();
        let num: f64 = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.u.iter().map(|y| y * y).sum();
        // the filter still removes the top sliver of the noise band
        assert!((num / den).sqrt() < 0.05, "rel diff {}", (num / den).sqrt());
        assert!((a.variance_ratio - b.variance_ratio).abs() < 0.02);
    }

    #[test]
    fn preprocess_rejects_too_many_markers() {
        let ms = record(
            &SimConfig {
                n_markers: 4,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(preprocess(&ms, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn signal_csv_and_sidecar_round_trip() {
        let ms = record(&SimConfig::default(), 3).unwrap();
        let cfg = PipelineConfig::default();
        let p = preprocess(&ms, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.csv");
        p.save(&path, &cfg).unwrap();
        let back = PrincipalSignal::load(&path).unwrap();
        assert_eq!(back.u, p.u);
        assert_eq!(back.t, p.t);
        assert_eq!(back.variance_ratio, p.variance_ratio);
        assert_eq!(back.principal_direction, p.principal_direction);
        let meta = KvMap::read(&path.with_extension("meta")).unwrap();
        assert_eq!(meta.require::<usize>("k").unwrap(), 16);
        assert_eq!(meta.require::<f64>("cutoff").unwrap(), 3.0);
    }
}
