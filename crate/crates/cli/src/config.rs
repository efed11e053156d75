//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use esikit::io::RegularGrid;
use esikit::search::{IdwSearchGrid, LocalGrid, Metric, SearchGrid};
use esikit::{AggSelector, EsiConfig, GlobalIdwParams, LocalInterpolator, LossSelector, ProcessKind};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub input: InputConfig,
    pub estimate: Option<EstimateConfig>,
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridSource {
    File(PathBuf),
    Inline(RegularGrid),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub points: PathBuf,
    pub grid: Option<GridSource>,
    /// Table of target coordinates `x0,…,x{d-1}` for non-gridded runs.
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Esi,
    IdwBaseline,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub method: Method,
    pub p_process: Option<ProcessKind>,
    pub n_partitions: Option<usize>,
    pub alpha: Option<f64>,
    pub data_cond: Option<bool>,
    pub local: Option<LocalInterpolator>,
    pub agg: Option<AggSelector>,
    pub radius: Option<f64>,
    pub exponent: Option<f64>,
    /// Adds a precision column computed with this loss.
    pub loss: Option<String>,
    /// Also write the sample cube.
    #[serde(default)]
    pub cube: bool,
}

pub enum Estimator {
    Esi(EsiConfig),
    Baseline(GlobalIdwParams),
}

impl EstimateConfig {
    pub fn estimator(&self, seed: u64) -> Result<Estimator> {
        match self.method {
            Method::Esi => {
                if self.radius.is_some() || self.exponent.is_some() {
                    bail!("`radius` and `exponent` belong to the idw-baseline method; use `local` for esi");
                }
                let d = EsiConfig::default();
                let cfg = EsiConfig {
                    p_process: self.p_process.unwrap_or(d.p_process),
                    n_partitions: self.n_partitions.unwrap_or(d.n_partitions),
                    alpha: self.alpha.unwrap_or(d.alpha),
                    data_cond: self.data_cond.unwrap_or(d.data_cond),
                    local: self.local.unwrap_or(d.local),
                    agg: self.agg.unwrap_or(d.agg),
                    seed,
                };
                cfg.validate()?;
                Ok(Estimator::Esi(cfg))
            }
            Method::IdwBaseline => {
                let esi_only = self.p_process.is_some()
                    || self.n_partitions.is_some()
                    || self.alpha.is_some()
                    || self.data_cond.is_some()
                    || self.local.is_some()
                    || self.agg.is_some()
                    || self.cube;
                if esi_only {
                    bail!("idw-baseline takes only `radius`, `exponent` and `loss`");
                }
                let p = GlobalIdwParams {
                    radius: self.radius.context("idw-baseline needs `radius`")?,
                    exponent: self.exponent.context("idw-baseline needs `exponent`")?,
                };
                p.validate()?;
                Ok(Estimator::Baseline(p))
            }
        }
    }

    pub fn loss(&self) -> Result<Option<LossSelector>> {
        if self.method == Method::IdwBaseline && self.loss.is_some() {
            bail!("idw-baseline has no sample cube, so no precision");
        }
        Ok(self.loss.as_deref().map(str::parse).transpose()?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_k")]
    pub k: i64,
    #[serde(default)]
    pub metric: Metric,
    pub p_process: Option<ProcessKind>,
    pub n_partitions: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub data_cond: Option<Vec<bool>>,
    pub local: Option<LocalGrid>,
    pub agg: Option<Vec<AggSelector>>,
    pub radius: Option<Vec<f64>>,
    pub exponent: Option<Vec<f64>>,
}

fn default_k() -> i64 {
    10
}

pub enum SearchPlan {
    Esi(SearchGrid),
    Baseline(IdwSearchGrid),
}

impl SearchConfig {
    pub fn plan(&self) -> Result<SearchPlan> {
        match self.method {
            Method::Esi => {
                if self.radius.is_some() || self.exponent.is_some() {
                    bail!("`radius` and `exponent` belong to the idw-baseline search; use `local` for esi");
                }
                let local = self.local.clone().context("esi search needs a `local` grid")?;
                let mut grid = SearchGrid::new(self.p_process.unwrap_or(ProcessKind::Mondrian), local);
                if let Some(v) = &self.n_partitions {
                    grid.n_partitions = v.clone();
                }
                if let Some(v) = &self.alpha {
                    grid.alpha = v.clone();
                }
                if let Some(v) = &self.data_cond {
                    grid.data_cond = v.clone();
                }
                if let Some(v) = &self.agg {
                    grid.agg = v.clone();
                }
                grid.expand(0)?;
                Ok(SearchPlan::Esi(grid))
            }
            Method::IdwBaseline => {
                let esi_only = self.p_process.is_some()
                    || self.n_partitions.is_some()
                    || self.alpha.is_some()
                    || self.data_cond.is_some()
                    || self.local.is_some()
                    || self.agg.is_some();
                if esi_only {
                    bail!("idw-baseline search takes only `radius` and `exponent` lists");
                }
                let grid = IdwSearchGrid {
                    radius: self.radius.clone().context("idw-baseline search needs `radius`")?,
                    exponent: self.exponent.clone().context("idw-baseline search needs `exponent`")?,
                };
                grid.expand()?;
                Ok(SearchPlan::Baseline(grid))
            }
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// A parsed configuration together with the directory its paths are relative to.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) }
    }
}
