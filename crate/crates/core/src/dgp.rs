//! Network simulation from the threshold link-formation model
//! `D_ij = 1[v_ij + W_ij'θ0 + A_i + A_j − U_ij ≥ 0]`.

use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::network::{dyads, Latent, NetworkData, PairCombiner, SymMatrix};
use crate::rng::{rng_from_seed, SimRng};

/// Rule producing the sparsity shift `C_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityRule {
    /// `log(log n)`
    Loglog,
    /// `sqrt(log n)`
    Sqrtlog,
    /// `log n`
    Log,
    Constant(f64),
}

impl SparsityRule {
    pub fn c_n(&self, n: usize) -> f64 {
        let ln = (n as f64).ln();
        match *self {
            SparsityRule::Loglog => ln.ln(),
            SparsityRule::Sqrtlog => ln.sqrt(),
            SparsityRule::Log => ln,
            SparsityRule::Constant(c) => c,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SparsityRule::Loglog => "loglog".into(),
            SparsityRule::Sqrtlog => "sqrtlog".into(),
            SparsityRule::Log => "log".into(),
            SparsityRule::Constant(c) => format!("constant({c})"),
        }
    }
}

fn default_n() -> usize {
    50
}
fn default_theta0() -> Vec<f64> {
    vec![1.5]
}
fn default_lambda() -> f64 {
    0.75
}
fn default_sparsity() -> SparsityRule {
    SparsityRule::Loglog
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_x_dist() -> Dist {
    Dist::beta(2.0, 2.0, -0.5)
}
fn default_v_dist() -> Dist {
    Dist::normal_sd(0.0, 2.0)
}
fn default_u_dist() -> Dist {
    Dist::beta(2.0, 2.0, -0.5)
}
fn default_a_mix() -> Dist {
    Dist::beta(0.5, 0.5, 0.0)
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    /// True coefficients; its length is the dyad covariate dimension.
    #[serde(default = "default_theta0")]
    pub theta0: Vec<f64>,
    /// Attribute dimension; defaults to `theta0.len()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_sparsity")]
    pub sparsity_rule: SparsityRule,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_x_dist")]
    pub x_dist: Dist,
    #[serde(default = "default_v_dist")]
    pub v_dist: Dist,
    #[serde(default = "default_u_dist")]
    pub u_dist: Dist,
    #[serde(default = "default_a_mix")]
    pub a_mix_dist: Dist,
    #[serde(default)]
    pub combiner: PairCombiner,
    /// When false, `A_i ≡ 0`.
    #[serde(default = "yes")]
    pub latent_heterogeneity: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            theta0: default_theta0(),
            k: None,
            lambda: default_lambda(),
            sparsity_rule: default_sparsity(),
            seed: default_seed(),
            x_dist: default_x_dist(),
            v_dist: default_v_dist(),
            u_dist: default_u_dist(),
            a_mix_dist: default_a_mix(),
            combiner: PairCombiner::default(),
            latent_heterogeneity: true,
        }
    }
}

impl DgpConfig {
    pub fn attr_dim(&self) -> usize {
        self.k.unwrap_or(self.theta0.len())
    }

    pub fn c_n(&self) -> f64 {
        self.sparsity_rule.c_n(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InsufficientAgents(self.n));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        let k = self.attr_dim();
        if k == 0 {
            return Err(Error::InvalidConfig(
                "attribute dimension must be at least 1".into(),
            ));
        }
        if self.combiner.out_dim(k) != self.theta0.len() {
            return Err(Error::InvalidConfig(format!(
                "theta0 has {} entries but the pair combiner yields {}",
                self.theta0.len(),
                self.combiner.out_dim(k)
            )));
        }
        if self.theta0.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("theta0 must be finite".into()));
        }
        for d in [&self.x_dist, &self.v_dist, &self.u_dist, &self.a_mix_dist] {
            d.validate()?;
        }
        if let Ok(m) = self.u_dist.mean() {
            if m.abs() > 1e-12 {
                log::warn!("u_dist has mean {m}; the model assumes mean-zero link shocks");
            }
        }
        Ok(())
    }

    /// `E[A_i + A_j]` under the configured distributions.
    pub fn true_mean_heterogeneity(&self) -> Result<f64> {
        if !self.latent_heterogeneity {
            return Ok(0.0);
        }
        let ex = self.x_dist.mean()?;
        let eb = self.a_mix_dist.mean()?;
        Ok(2.0 * (self.lambda * ex - (1.0 - self.lambda) * self.c_n() * eb))
    }

    /// Simulates with `self.seed`.
    pub fn simulate(&self) -> Result<NetworkData> {
        simulate_network(self, self.seed)
    }
}

/// Draws one network. Draw order: all `X`, all mixing draws `B`, then per
/// dyad `i < j` in row-major order `v_ij` followed by `U_ij`.
///
/// `A_i = λ·x̄_i − (1−λ)·C_n·B_i`, with `x̄_i` the mean of agent `i`'s
/// attributes (the attribute itself when `K = 1`).
pub fn simulate_network(cfg: &DgpConfig, seed: u64) -> Result<NetworkData> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    simulate_with_rng(cfg, &mut rng)
}

pub fn simulate_with_rng(cfg: &DgpConfig, rng: &mut SimRng) -> Result<NetworkData> {
    let n = cfg.n;
    let k = cfg.attr_dim();
    let xs = cfg.x_dist.sampler()?;
    let vs = cfg.v_dist.sampler()?;
    let us = cfg.u_dist.sampler()?;
    let bs = cfg.a_mix_dist.sampler()?;

    let x: Vec<f64> = (0..n * k).map(|_| xs.sample(rng)).collect();
    let b: Vec<f64> = (0..n).map(|_| bs.sample(rng)).collect();
    let c_n = cfg.c_n();
    let a: Vec<f64> = (0..n)
        .map(|i| {
            if !cfg.latent_heterogeneity {
                return 0.0;
            }
            let xbar = x[i * k..(i + 1) * k].iter().sum::<f64>() / k as f64;
            cfg.lambda * xbar - (1.0 - cfg.lambda) * c_n * b[i]
        })
        .collect();

    let mut v = SymMatrix::zeros(n);
    let mut u = SymMatrix::zeros(n);
    for (i, j) in dyads(n) {
        v.set(i, j, vs.sample(rng));
        u.set(i, j, us.sample(rng));
    }

    let kw = cfg.theta0.len();
    let mut w = vec![0.0; kw];
    let mut d = vec![0u8; n * n];
    for (i, j) in dyads(n) {
        cfg.combiner
            .combine(&x[i * k..(i + 1) * k], &x[j * k..(j + 1) * k], &mut w);
        let index: f64 =
            v.get(i, j) + w.iter().zip(&cfg.theta0).map(|(a, b)| a * b).sum::<f64>() + a[i] + a[j]
                - u.get(i, j);
        let link = (index >= 0.0) as u8;
        d[i * n + j] = link;
        d[j * n + i] = link;
    }
    NetworkData::new(n, k, x, v, d)?.with_latent(Latent { a, u })
}
