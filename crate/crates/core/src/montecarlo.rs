//! Seeded Monte Carlo replication over a grid of sample sizes, sparsity
//! rules and bandwidths.
//!
//! Replication `r` of cell `(n, rule)` simulates with
//! `derive_seed(base_seed, [label_key("n={n}/{rule}"), r])`, so a cell can be
//! re-run in isolation and bandwidth blocks share the same networks.
//! Aggregation folds replications in index order, so results do not depend on
//! the thread count.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{simulate_network, DgpConfig, SparsityRule};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::estimator::{SpecialRegressor, TrimPolicy};
use crate::kde::{BaseKernel, DensityPolicy, KernelSpec, DEFAULT_DENSITY_FLOOR};
use crate::network::NetworkData;
use crate::rng::{derive_seed, label_key};
use crate::tail::{estimate_theta_tail, TailConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McEstimator {
    #[default]
    KnownDensity,
    KernelFirstStage,
    Tail,
}

impl McEstimator {
    pub fn label(self) -> &'static str {
        match self {
            McEstimator::KnownDensity => "known_density",
            McEstimator::KernelFirstStage => "kernel_first_stage",
            McEstimator::Tail => "tail",
        }
    }
}

/// How the degree column summarises a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeNormalization {
    /// Links over `n(n−1)/2`.
    LinkFraction,
    /// Mean of the `n × n` adjacency matrix, diagonal included.
    #[default]
    AdjacencyMean,
}

impl DegreeNormalization {
    pub fn degree(self, net: &NetworkData) -> f64 {
        match self {
            DegreeNormalization::LinkFraction => net.average_degree(),
            DegreeNormalization::AdjacencyMean => net.adjacency_mean(),
        }
    }
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
fn default_h_list() -> Vec<f64> {
    vec![0.025]
}
fn default_order() -> usize {
    2
}
fn default_floor() -> f64 {
    DEFAULT_DENSITY_FLOOR
}
fn default_base_seed() -> u64 {
    20_240_601
}
fn default_name() -> String {
    "design".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McDesign {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_rules")]
    pub sparsity_list: Vec<SparsityRule>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub estimator: McEstimator,
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    #[serde(default = "default_kernel")]
    pub kernel: BaseKernel,
    #[serde(default = "default_order")]
    pub kernel_order: usize,
    /// Condition the first-stage density on `(X_i, X_j)`.
    #[serde(default)]
    pub conditional: bool,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
    /// Density used by `known_density`; defaults to the simulation's `v` law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_density: Option<Dist>,
    #[serde(default)]
    pub trim: TrimPolicy,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub degree: DegreeNormalization,
}

fn default_kernel() -> BaseKernel {
    BaseKernel::Gaussian
}

impl Default for McDesign {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// One configured estimator run on one network.
enum Runner {
    Special(SpecialRegressor),
    Tail(TailConfig),
}

impl Runner {
    fn run(&self, net: &NetworkData) -> Result<Vec<f64>> {
        match self {
            Runner::Special(s) => s.fit(net).map(|f| f.theta),
            Runner::Tail(t) => estimate_theta_tail(net, t).map(|f| f.theta),
        }
    }
}

/// Identifies one cell of the design grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellId {
    pub n: usize,
    pub rule: SparsityRule,
    pub h: Option<f64>,
}

impl CellId {
    pub fn label(&self, est: McEstimator) -> String {
        match self.h {
            Some(h) => format!("{}/h={}/n={}/{}", est.label(), h, self.n, self.rule.label()),
            None => format!("{}/n={}/{}", est.label(), self.n, self.rule.label()),
        }
    }

    /// Key shared by all bandwidths of the same `(n, rule)`.
    pub fn seed_key(&self) -> u64 {
        label_key(&format!("n={}/{}", self.n, self.rule.label()))
    }
}

impl McDesign {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n_list.is_empty() || self.sparsity_list.is_empty() {
            return Err(Error::InvalidConfig(
                "n_list and sparsity_list must be nonempty".into(),
            ));
        }
        if self.estimator == McEstimator::KernelFirstStage && self.h_list.is_empty() {
            return Err(Error::InvalidConfig(
                "h_list must be nonempty for the kernel first stage".into(),
            ));
        }
        for &n in &self.n_list {
            DgpConfig {
                n,
                ..self.dgp.clone()
            }
            .validate()?;
        }
        for &h in self
            .h_list
            .iter()
            .filter(|_| self.estimator == McEstimator::KernelFirstStage)
        {
            KernelSpec::new(self.kernel, self.kernel_order, h)?;
        }
        self.trim.validate()?;
        Ok(())
    }

    /// Cells in output order: bandwidth blocks, then `n`, then sparsity rule.
    pub fn cells(&self) -> Vec<CellId> {
        let hs: Vec<Option<f64>> = match self.estimator {
            McEstimator::KernelFirstStage => self.h_list.iter().map(|&h| Some(h)).collect(),
            _ => vec![None],
        };
        let mut out = Vec::new();
        for h in hs {
            for &n in &self.n_list {
                for &rule in &self.sparsity_list {
                    out.push(CellId { n, rule, h });
                }
            }
        }
        out
    }

    fn runner(&self, h: Option<f64>) -> Result<Runner> {
        let density = match self.estimator {
            McEstimator::Tail => return Ok(Runner::Tail(self.tail.clone())),
            McEstimator::KnownDensity => DensityPolicy::Known(
                self.known_density
                    .clone()
                    .unwrap_or_else(|| self.dgp.v_dist.clone()),
            ),
            McEstimator::KernelFirstStage => DensityPolicy::Kernel {
                kernel: KernelSpec::new(
                    self.kernel,
                    self.kernel_order,
                    h.expect("kernel cells carry h"),
                )?,
                conditional: self.conditional,
            },
        };
        let mut s = SpecialRegressor::new(density);
        s.combiner = self.dgp.combiner.clone();
        s.density_floor = self.density_floor;
        s.trim = self.trim;
        Ok(Runner::Special(s))
    }

    pub fn replication_seed(&self, cell: &CellId, rep: usize) -> u64 {
        derive_seed(self.base_seed, &[cell.seed_key(), rep as u64])
    }

    pub fn simulate_rep(&self, cell: &CellId, rep: usize) -> Result<NetworkData> {
        let cfg = DgpConfig {
            n: cell.n,
            sparsity_rule: cell.rule,
            ..self.dgp.clone()
        };
        simulate_network(&cfg, self.replication_seed(cell, rep))
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub design: String,
    pub n: usize,
    pub estimator: String,
    pub h: Option<f64>,
    pub mean: f64,
    pub median: f64,
    pub std: Option<f64>,
    pub mse: f64,
    pub degree: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub cell: String,
    pub rep: usize,
    pub theta: Option<Vec<f64>>,
    pub degree: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub name: String,
    pub reps: usize,
    pub theta0: Vec<f64>,
    pub cells: Vec<CellSummary>,
    pub draws: Vec<DrawRecord>,
}

fn status_of(e: &Error) -> String {
    match e {
        Error::SingularGamma { .. } => "singular".into(),
        Error::TrimmingEmpty => "trimming_empty".into(),
        other => format!("error: {other}").replace([',', '\n'], ";"),
    }
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    }
}

/// Summary of one coordinate over the successful replications; `std` is the
/// population standard deviation, so `mse = std² + (mean − θ₀)²`.
pub fn summarize(values: &[f64], theta0: f64) -> (f64, f64, Option<f64>, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    let mse = var + (mean - theta0).powi(2);
    let std = (values.len() > 1).then(|| var.sqrt());
    (mean, median(&s), std, mse)
}

/// Runs every cell of the design. `jobs` sets the worker count (`None` uses
/// the global pool); the result is identical for any value.
pub fn run_design(design: &McDesign, jobs: Option<usize>) -> Result<McResult> {
    design.validate()?;
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {j} worker threads: {e}")))?
            .install(|| run_cells(design)),
        None => run_cells(design),
    }
}

fn run_cells(design: &McDesign) -> Result<McResult> {
    let k = design.dgp.theta0.len();
    let mut cells = Vec::new();
    let mut draws = Vec::new();
    for cell in design.cells() {
        let runner = design.runner(cell.h)?;
        let label = cell.label(design.estimator);
        let outcomes: Vec<(Result<Vec<f64>>, f64)> = (0..design.reps)
            .into_par_iter()
            .map(|rep| match design.simulate_rep(&cell, rep) {
                Ok(net) => (runner.run(&net), design.degree.degree(&net)),
                Err(e) => (Err(e), f64::NAN),
            })
            .collect();
        let mut ok: Vec<Vec<f64>> = Vec::new();
        let mut failures = 0;
        let mut degree_sum = 0.0;
        let mut degree_count = 0usize;
        for (rep, (res, deg)) in outcomes.into_iter().enumerate() {
            if deg.is_finite() {
                degree_sum += deg;
                degree_count += 1;
            }
            let (theta, status) = match res {
                Ok(t) => {
                    ok.push(t.clone());
                    (Some(t), "ok".to_string())
                }
                Err(e) => {
                    failures += 1;
                    log::warn!("{label} rep {rep}: {e}");
                    (None, status_of(&e))
                }
            };
            draws.push(DrawRecord {
                cell: label.clone(),
                rep,
                theta,
                degree: deg,
                status,
            });
        }
        if ok.is_empty() {
            return Err(Error::AllReplicationsFailed {
                cell: label,
                reps: design.reps,
            });
        }
        let degree = if degree_count > 0 {
            degree_sum / degree_count as f64
        } else {
            f64::NAN
        };
        for c in 0..k {
            let vals: Vec<f64> = ok.iter().map(|t| t[c]).collect();
            let (mean, med, std, mse) = summarize(&vals, design.dgp.theta0[c]);
            let estimator = if k == 1 {
                design.estimator.label().to_string()
            } else {
                format!("{}:{}", design.estimator.label(), c + 1)
            };
            cells.push(CellSummary {
                design: cell.rule.label(),
                n: cell.n,
                estimator,
                h: cell.h,
                mean,
                median: med,
                std,
                mse,
                degree,
                failures,
            });
        }
    }
    Ok(McResult {
        name: design.name.clone(),
        reps: design.reps,
        theta0: design.dgp.theta0.clone(),
        cells,
        draws,
    })
}

pub const CSV_HEADER: &str = "design,n,estimator,h,mean,median,std,mse,degree,failures";

fn na(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub fn emit_table(res: &McResult, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => to_csv(&res.cells),
        TableFormat::Markdown => to_markdown(res),
    }
}

pub fn to_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for c in cells {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            c.design,
            c.n,
            c.estimator,
            na(c.h),
            c.mean,
            c.median,
            na(c.std),
            c.mse,
            c.degree,
            c.failures
        )
        .unwrap();
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<CellSummary>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            });
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("invalid number `{s}`")))
        };
        let opt = |s: &str| {
            if s == "NA" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        out.push(CellSummary {
            design: f[0].to_string(),
            n: f[1]
                .parse()
                .map_err(|_| err(format!("invalid n `{}`", f[1])))?,
            estimator: f[2].to_string(),
            h: opt(f[3])?,
            mean: num(f[4])?,
            median: num(f[5])?,
            std: opt(f[6])?,
            mse: num(f[7])?,
            degree: num(f[8])?,
            failures: f[9]
                .parse()
                .map_err(|_| err(format!("invalid failure count `{}`", f[9])))?,
        });
    }
    Ok(out)
}

/// `cell,rep,theta,degree,status`; vector estimates are `;`-joined.
pub fn draws_csv(res: &McResult) -> String {
    let mut s = String::from("cell,rep,theta,degree,status\n");
    for d in &res.draws {
        let theta = d.theta.as_ref().map_or_else(
            || "NA".to_string(),
            |t| {
                t.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            },
        );
        writeln!(
            s,
            "{},{},{},{},{}",
            d.cell, d.rep, theta, d.degree, d.status
        )
        .unwrap();
    }
    s
}

fn rule_title(design: &str) -> &str {
    match design {
        "loglog" => "log(log(n))",
        "sqrtlog" => "log(n)^(1/2)",
        "log" => "log(n)",
        other => other,
    }
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

/// One table per estimator and bandwidth, rows grouped by `n`.
pub fn to_markdown(res: &McResult) -> String {
    let mut s = String::new();
    let mut blocks: Vec<(String, Option<f64>)> = Vec::new();
    for c in &res.cells {
        let key = (c.estimator.clone(), c.h);
        if !blocks.contains(&key) {
            blocks.push(key);
        }
    }
    for (est, h) in blocks {
        match h {
            Some(h) => writeln!(s, "### {} ({est}, h = {h})\n", res.name).unwrap(),
            None => writeln!(s, "### {} ({est})\n", res.name).unwrap(),
        }
        s.push_str("| | mean | median | std | MSE | Degree | failures |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        let mut last_n = None;
        for c in res.cells.iter().filter(|c| c.estimator == est && c.h == h) {
            if last_n != Some(c.n) {
                writeln!(s, "| **n = {}** | | | | | | |", c.n).unwrap();
                last_n = Some(c.n);
            }
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} |",
                rule_title(&c.design),
                fmt4(c.mean),
                fmt4(c.median),
                c.std.map_or_else(|| "NA".into(), fmt4),
                fmt4(c.mse),
                fmt4(c.degree),
                c.failures
            )
            .unwrap();
        }
        writeln!(s, "\nMonte Carlo replications = {}.\n", res.reps).unwrap();
    }
    s
}
