//! JSON run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use dyadnet::dgp::{DgpConfig, SparsityRule};
use dyadnet::dist::Dist;
use dyadnet::estimator::{Method, SpecialRegressor, TrimPolicy};
use dyadnet::inference::VarianceComponents;
use dyadnet::kde::{BaseKernel, DensityPolicy, KernelSpec, DEFAULT_DENSITY_FLOOR};
use dyadnet::montecarlo::{DegreeNormalization, McDesign, McEstimator};
use dyadnet::tail::TailConfig;
use dyadnet::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub kde: KdeSection,
    #[serde(default)]
    pub trim: TrimPolicy,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Special,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    #[default]
    Known,
    Kernel,
}

/// A distribution given either in compact form (`"normal(0,4)"`) or as a
/// full object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Compact(String),
    Full(Dist),
}

impl DistSpec {
    pub fn resolve(&self) -> Result<Dist> {
        match self {
            DistSpec::Compact(s) => Dist::parse_compact(s),
            DistSpec::Full(d) => {
                d.validate()?;
                Ok(d.clone())
            }
        }
    }
}

fn default_floor() -> f64 {
    DEFAULT_DENSITY_FLOOR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default)]
    pub density: DensityKind,
    /// Known `f(v)`; defaults to `dgp.v_dist`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_density: Option<DistSpec>,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub tail: TailConfig,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn default_h() -> f64 {
    0.025
}
fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSection {
    #[serde(default = "default_base")]
    pub base: BaseKernel,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub conditional: bool,
}

fn default_base() -> BaseKernel {
    BaseKernel::Gaussian
}

impl Default for KdeSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    #[default]
    None,
    Oracle,
    Plugin,
    Bootstrap,
}

fn default_smoothing() -> f64 {
    1.0
}
fn default_draws() -> usize {
    200
}
fn default_level() -> f64 {
    0.95
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    #[serde(default)]
    pub se: SeMode,
    #[serde(default)]
    pub components: VarianceComponents,
    /// Bandwidth multiplier for the plug-in kernel regression.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_draws")]
    pub bootstrap_draws: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn default_name() -> String {
    "results".into()
}
fn default_n_list() -> Vec<usize> {
    vec![50, 100]
}
fn default_rules() -> Vec<SparsityRule> {
    vec![
        SparsityRule::Loglog,
        SparsityRule::Sqrtlog,
        SparsityRule::Log,
    ]
}
fn default_reps() -> usize {
    500
}
fn default_base_seed() -> u64 {
    20_240_601
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_rules")]
    pub sparsity_list: Vec<SparsityRule>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub estimator: McEstimator,
    /// Bandwidths for `kernel_first_stage`; defaults to `[kde.h]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub degree: DegreeNormalization,
}

impl Default for McSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write `<name>_draws.csv` with one line per replication.
    #[serde(default)]
    pub dump_draws: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CliConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("column {}: {e}", e.column()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                return Err(Error::InvalidConfig(format!(
                    "schema_version {v} is not supported; this build reads version {SCHEMA_VERSION}"
                )));
            }
        }
        self.dgp.validate()?;
        self.trim.validate()?;
        KernelSpec::new(self.kde.base, self.kde.order, self.kde.h)?;
        if let Some(d) = &self.estimator.known_density {
            d.resolve()?;
        }
        if self.estimator.density_floor.is_nan() || self.estimator.density_floor <= 0.0 {
            return Err(Error::InvalidConfig(
                "density_floor must be positive".into(),
            ));
        }
        if !(self.inference.level > 0.0 && self.inference.level < 1.0) {
            return Err(Error::InvalidConfig(
                "inference.level must lie in (0, 1)".into(),
            ));
        }
        self.mc_design()?.validate()
    }

    pub fn known_density(&self) -> Result<Dist> {
        match &self.estimator.known_density {
            Some(d) => d.resolve(),
            None => Ok(self.dgp.v_dist.clone()),
        }
    }

    pub fn density_policy(&self) -> Result<DensityPolicy> {
        Ok(match self.estimator.density {
            DensityKind::Known => DensityPolicy::Known(self.known_density()?),
            DensityKind::Kernel => DensityPolicy::Kernel {
                kernel: KernelSpec::new(self.kde.base, self.kde.order, self.kde.h)?,
                conditional: self.kde.conditional,
            },
        })
    }

    pub fn special_regressor(&self) -> Result<SpecialRegressor> {
        let mut s = SpecialRegressor::new(self.density_policy()?);
        s.combiner = self.dgp.combiner.clone();
        s.density_floor = self.estimator.density_floor;
        s.trim = self.trim;
        s.method = self.estimator.method;
        Ok(s)
    }

    pub fn tail_config(&self) -> TailConfig {
        TailConfig {
            combiner: self.dgp.combiner.clone(),
            ..self.estimator.tail.clone()
        }
    }

    pub fn mc_design(&self) -> Result<McDesign> {
        Ok(McDesign {
            name: self.mc.name.clone(),
            dgp: self.dgp.clone(),
            n_list: self.mc.n_list.clone(),
            sparsity_list: self.mc.sparsity_list.clone(),
            reps: self.mc.reps,
            estimator: self.mc.estimator,
            h_list: self.mc.h_list.clone().unwrap_or_else(|| vec![self.kde.h]),
            kernel: self.kde.base,
            kernel_order: self.kde.order,
            conditional: self.kde.conditional,
            density_floor: self.estimator.density_floor,
            known_density: Some(self.known_density()?),
            trim: self.trim,
            tail: self.tail_config(),
            base_seed: self.mc.base_seed,
            degree: self.mc.degree,
        })
    }
}
