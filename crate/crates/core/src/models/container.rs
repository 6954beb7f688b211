//! Versioned text container for trained models.
//!
//! ```text
//! SLOSH-MODEL v1
//! kind=gpr
//! <field>=<space separated values>
//! ...
//! end
//! ```
//!
//! A transfer map (`kind=xfer`) lists its warp parameters, then a `base` line
//! followed by the complete embedded base container. Floats use shortest
//! round-trip formatting, so a loaded model predicts bit-identically.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    gpr::GprModel,
    quad::QuadModel,
    svm::{BinaryMachine, SvmModel},
    Model,
};
use crate::error::{Error, Result};
use crate::transfer::TransferMap;

pub const MAGIC: &str = "SLOSH-MODEL v1";

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn field(out: &mut String, key: &str, value: String) {
    let _ = writeln!(out, "{key}={value}");
}

fn write_model(out: &mut String, model: &Model) {
    out.push_str(MAGIC);
    out.push('\n');
    field(out, "kind", model.kind().to_string());
    match model {
        Model::Gpr(m) => {
            field(out, "n", m.x.len().to_string());
            field(out, "x", join(m.x.iter().flatten()));
            field(out, "y", join(&m.y));
            field(out, "x_mean", join(m.x_mean));
            field(out, "x_std", join(m.x_std));
            field(out, "y_mean", m.y_mean.to_string());
            field(out, "y_std", m.y_std.to_string());
            field(out, "length_scales", join(m.length_scales));
            field(out, "signal_variance", m.signal_variance.to_string());
            field(out, "noise_variance", m.noise_variance.to_string());
            field(out, "jitter", m.jitter.to_string());
            field(out, "lml", m.log_marginal_likelihood.to_string());
            field(out, "alpha", join(&m.alpha));
            field(out, "chol", join(&m.chol));
        }
        Model::Quad(m) => field(out, "coef", join(m.coef)),
        Model::Svm(m) => {
            field(out, "classes", join(&m.classes));
            field(out, "gamma", m.gamma.to_string());
            field(out, "c", m.c.to_string());
            field(out, "x_mean", join(m.x_mean));
            field(out, "x_std", join(m.x_std));
            field(out, "support", join(m.support.iter().flatten()));
            field(out, "n_machines", m.machines.len().to_string());
            for (i, mach) in m.machines.iter().enumerate() {
                field(out, &format!("m{i}.pair"), join([mach.pos, mach.neg]));
                field(out, &format!("m{i}.rho"), mach.rho.to_string());
                field(out, &format!("m{i}.kkt_gap"), mach.kkt_gap.to_string());
                field(out, &format!("m{i}.sv"), join(&mach.sv));
                field(out, &format!("m{i}.coef"), join(&mach.coef));
                field(out, &format!("m{i}.alpha"), join(&mach.alpha));
            }
        }
        Model::Xfer(m) => {
            field(out, "alpha1", m.alpha1.to_string());
            field(out, "alpha2", m.alpha2.to_string());
            field(out, "beta1", m.beta1.to_string());
            field(out, "beta2", m.beta2.to_string());
            out.push_str("base\n");
            write_model(out, &m.base);
        }
    }
    out.push_str("end\n");
}

pub fn model_to_string(model: &Model) -> String {
    let mut out = String::new();
    write_model(&mut out, model);
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_str(&fs::read_to_string(path)?)
}

struct Fields {
    map: HashMap<String, (usize, String)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Result<(usize, &str)> {
        self.map
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::invalid(format!("model file lacks field {key:?}")))
    }

    fn vec<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let (line, v) = self.raw(key)?;
        v.split_whitespace()
            .map(|s| s.parse::<T>().map_err(|_| Error::parse(line, format!("bad value in {key}"))))
            .collect()
    }

    fn one<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.raw(key)?;
        v.trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad value for {key}")))
    }

    fn pair(&self, key: &str) -> Result<[f64; 2]> {
        let v: Vec<f64> = self.vec(key)?;
        let (line, _) = self.raw(key)?;
        v.try_into()
            .map_err(|_| Error::parse(line, format!("{key} must hold 2 values")))
    }
}

fn points(flat: Vec<f64>, line: usize) -> Result<Vec<[f64; 2]>> {
    if flat.len() % 2 != 0 {
        return Err(Error::parse(line, "point list has odd length"));
    }
    Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
}

fn parse_block(lines: &[&str], pos: &mut usize) -> Result<Model> {
    if lines.get(*pos).map(|l| l.trim()) != Some(MAGIC) {
        return Err(Error::parse(*pos + 1, format!("expected {MAGIC:?}")));
    }
    *pos += 1;
    let mut fields = Fields { map: HashMap::new() };
    let mut base = None;
    loop {
        let lineno = *pos + 1;
        let line = lines
            .get(*pos)
            .ok_or_else(|| Error::parse(lineno, "unexpected end of model file"))?
            .trim();
        *pos += 1;
        if line == "end" {
            break;
        }
        if line == "base" {
            base = Some(parse_block(lines, pos)?);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, "expected key=value"))?;
        fields.map.insert(k.to_string(), (lineno, v.to_string()));
    }

    let kind: String = fields.one("kind")?;
    let model = match kind.as_str() {
        "gpr" => {
            let n: usize = fields.one("n")?;
            let (xl, _) = fields.raw("x")?;
            let x = points(fields.vec("x")?, xl)?;
            let m = GprModel {
                x,
                y: fields.vec("y")?,
                x_mean: fields.pair("x_mean")?,
                x_std: fields.pair("x_std")?,
                y_mean: fields.one("y_mean")?,
                y_std: fields.one("y_std")?,
                length_scales: fields.pair("length_scales")?,
                signal_variance: fields.one("signal_variance")?,
                noise_variance: fields.one("noise_variance")?,
                jitter: fields.one("jitter")?,
                log_marginal_likelihood: fields.one("lml")?,
                alpha: fields.vec("alpha")?,
                chol: fields.vec("chol")?,
            };
            if m.x.len() != n || m.y.len() != n || m.alpha.len() != n || m.chol.len() != n * n {
                return Err(Error::invalid("gpr model arrays disagree with n"));
            }
            Model::Gpr(m)
        }
        "quad" => {
            let v: Vec<f64> = fields.vec("coef")?;
            let coef: [f64; 6] = v
                .try_into()
                .map_err(|_| Error::invalid("quad model needs 6 coefficients"))?;
            Model::Quad(QuadModel { coef })
        }
        "svm" => {
            let (sl, _) = fields.raw("support")?;
            let support = points(fields.vec("support")?, sl)?;
            let n_machines: usize = fields.one("n_machines")?;
            let mut machines = Vec::with_capacity(n_machines);
            for i in 0..n_machines {
                let pair: Vec<u32> = fields.vec(&format!("m{i}.pair"))?;
                if pair.len() != 2 {
                    return Err(Error::invalid("machine pair must hold 2 classes"));
                }
                let m = BinaryMachine {
                    pos: pair[0],
                    neg: pair[1],
                    rho: fields.one(&format!("m{i}.rho"))?,
                    kkt_gap: fields.one(&format!("m{i}.kkt_gap"))?,
                    sv: fields.vec(&format!("m{i}.sv"))?,
                    coef: fields.vec(&format!("m{i}.coef"))?,
                    alpha: fields.vec(&format!("m{i}.alpha"))?,
                };
                if m.sv.len() != m.coef.len() || m.sv.iter().any(|&s| s >= support.len()) {
                    return Err(Error::invalid("svm machine references bad support vectors"));
                }
                machines.push(m);
            }
            Model::Svm(SvmModel {
                classes: fields.vec("classes")?,
                support,
                machines,
                gamma: fields.one("gamma")?,
                c: fields.one("c")?,
                x_mean: fields.pair("x_mean")?,
                x_std: fields.pair("x_std")?,
            })
        }
        "xfer" => {
            let base = base.ok_or_else(|| Error::invalid("xfer model lacks embedded base"))?;
            if !base.is_regressor() {
                return Err(Error::invalid("xfer base must be a regressor"));
            }
            Model::Xfer(TransferMap {
                alpha1: fields.one("alpha1")?,
                alpha2: fields.one("alpha2")?,
                beta1: fields.one("beta1")?,
                beta2: fields.one("beta2")?,
                base: Box::new(base),
            })
        }
        other => return Err(Error::invalid(format!("unknown model kind {other:?}"))),
    };
    Ok(model)
}

pub fn model_from_str(text: &str) -> Result<Model> {
    let lines: Vec<&str> = text.lines().collect();
    let mut pos = 0;
    let m = parse_block(&lines, &mut pos)?;
    if lines[pos..].iter().any(|l| !l.trim().is_empty()) {
        return Err(Error::parse(pos + 1, "trailing content after model"));
    }
    Ok(m)
}
