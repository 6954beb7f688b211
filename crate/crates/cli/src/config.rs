//! `--config` files: one `section.key=value` per line.
//!
//! Sections are `sim`, `pipeline`, `fit`, `gpr` and `svm`; each maps onto
//! the matching library config. A section that is present replaces the
//! command's defaults for that stage, keys left out keep library defaults.

use std::path::Path;

use anyhow::{bail, Result};
use slosh_core::dataset::BenchConfig;
use slosh_core::fit::FitConfig;
use slosh_core::kv::KvMap;
use slosh_core::models::{GprConfig, SvmConfig};
use slosh_core::signal::PipelineConfig;
use slosh_core::sim::SimConfig;

const SECTIONS: [&str; 5] = ["sim", "pipeline", "fit", "gpr", "svm"];

#[derive(Debug, Default)]
pub struct Settings {
    kv: KvMap,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let kv = KvMap::read(path)?;
        for key in kv.keys() {
            let ok = key
                .split_once('.')
                .is_some_and(|(s, rest)| SECTIONS.contains(&s) && !rest.is_empty());
            if !ok {
                bail!(slosh_core::Error::Invalid(format!(
                    "config key {key:?} is not of the form <section>.<key> with section one of {}",
                    SECTIONS.join(", ")
                )));
            }
        }
        Ok(Self { kv })
    }

    fn section(&self, name: &str) -> Option<KvMap> {
        let s = self.kv.section(name);
        (!s.is_empty()).then_some(s)
    }

    pub fn sim(&self) -> Result<SimConfig> {
        Ok(match self.section("sim") {
            Some(s) => SimConfig::from_kv(&s)?,
            None => SimConfig::default(),
        })
    }

    pub fn pipeline(&self, base: PipelineConfig) -> Result<PipelineConfig> {
        Ok(match self.section("pipeline") {
            Some(s) => PipelineConfig::from_kv(&s)?,
            None => base,
        })
    }

    /// The fit seed follows `--seed` unless the config sets it.
    pub fn fit(&self, base: FitConfig, seed: u64) -> Result<FitConfig> {
        Ok(match self.section("fit") {
            Some(s) => {
                let mut c = FitConfig::from_kv(&s)?;
                if !s.contains("seed") {
                    c.seed = seed;
                }
                c
            }
            None => FitConfig { seed, ..base },
        })
    }

    pub fn gpr(&self, seed: u64) -> Result<GprConfig> {
        Ok(match self.section("gpr") {
            Some(s) => {
                let mut c = GprConfig::from_kv(&s)?;
                if !s.contains("seed") {
                    c.seed = seed;
                }
                c
            }
            None => GprConfig {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn svm(&self) -> Result<SvmConfig> {
        Ok(match self.section("svm") {
            Some(s) => SvmConfig::from_kv(&s)?,
            None => SvmConfig::default(),
        })
    }

    /// Benchmark settings on top of `base`.
    pub fn bench(&self, base: BenchConfig, seed: u64) -> Result<BenchConfig> {
        Ok(BenchConfig {
            pipeline: self.pipeline(base.pipeline)?,
            fit: self.fit(base.fit, seed)?,
            gpr: self.gpr(seed)?,
            svm: self.svm()?,
            train_size: base.train_size,
        })
    }
}
