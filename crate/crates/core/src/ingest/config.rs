use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataConfig, DoseBins};
use crate::benchmarks::CurveKind;
use crate::model::{Hyperparameters, Variant};
use crate::sampler::SamplerConfig;
use crate::simulate::SimulationConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self { folds: 5, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub folds: usize,
    pub restarts: usize,
    pub kinds: Vec<CurveKind>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            restarts: 20,
            kinds: CurveKind::ALL.to_vec(),
        }
    }
}

/// Everything a run needs, read from a TOML file. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Variant,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub dose_bins: DoseBins,
    #[serde(default)]
    pub hyper: Hyperparameters,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub crossval: CrossvalConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a file; relative data paths are taken relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(data) = &mut config.data {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut data.observations);
            data.w.as_mut().map(fix);
            data.z.as_mut().map(fix);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dose_bins.validate()?;
        self.hyper.validate()?;
        self.sampler.validate()?;
        self.simulation.validate()?;
        if self.crossval.folds < 2 {
            return Err(Error::Config("crossval.folds must be at least 2".into()));
        }
        if self.benchmark.folds == 0 || self.benchmark.restarts == 0 {
            return Err(Error::Config("benchmark folds and restarts must be positive".into()));
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [data] section".into()))
    }
}
