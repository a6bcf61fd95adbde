//! Sign-matching tetrad estimator for the large-support regime.
//!
//! `Ĥₙ(θ, γ) = [4!·C(n,4)]⁻¹ Σ_σ sign(ṽ_σ + W̃_σ'θ)·D̃_σ·1[|D̃_σ| = 2]·1[|Δv_i|, |Δv_j| ≥ γ]`
//! over ordered tetrads `σ = (i1, j1, i2, j2)` with `Δv_i = v_{i1j1} − v_{i1j2}`
//! and `Δv_j = v_{i2j1} − v_{i2j2}`. A tetrad has `|D̃| = 2` exactly when
//! `j1` and `j2` split the neighbourhoods of `i1` and `i2` in opposite
//! directions, so only those tetrads are enumerated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimateReport;
use crate::network::{NetworkData, PairCombiner, PairMatrix};

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Number of ordered tetrads `n(n−1)(n−2)(n−3)`.
pub fn ordered_tetrads(n: usize) -> f64 {
    (n * (n - 1) * (n - 2) * (n - 3)) as f64
}

/// Tetrads with `|D̃| = 2` that survive the `γ` filter, each stored once in
/// the orientation `D_{i1 j1} = D_{i2 j2} = 1`, `D_{i1 j2} = D_{i2 j1} = 0`,
/// `i1 < i2`. Every stored tetrad stands for four ordered tetrads with the
/// same contribution.
#[derive(Debug, Clone)]
pub struct TetradSet {
    n: usize,
    k: usize,
    gamma: f64,
    dv: Vec<f64>,
    dw: Vec<f64>,
    discordant: u64,
}

impl TetradSet {
    pub fn build(net: &NetworkData, w: &PairMatrix, gamma: f64) -> Result<Self> {
        let n = net.n();
        if n < 4 {
            return Err(Error::InsufficientAgents(n));
        }
        if w.n() != n {
            return Err(Error::InvalidConfig(
                "pair covariates do not match the network".into(),
            ));
        }
        let k = w.k();
        let mut dv = Vec::new();
        let mut dw = Vec::new();
        let mut discordant = 0u64;
        let mut p = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for i1 in 0..n {
            for i2 in (i1 + 1)..n {
                p.clear();
                q.clear();
                for j in 0..n {
                    if j == i1 || j == i2 {
                        continue;
                    }
                    match (net.d(i1, j), net.d(i2, j)) {
                        (1, 0) => p.push(j),
                        (0, 1) => q.push(j),
                        _ => {}
                    }
                }
                discordant += (p.len() * q.len()) as u64;
                for &a in &p {
                    for &b in &q {
                        let d1 = net.v(i1, a) - net.v(i1, b);
                        let d2 = net.v(i2, a) - net.v(i2, b);
                        if d1.abs() < gamma || d2.abs() < gamma {
                            continue;
                        }
                        dv.push(d1 - d2);
                        let (w1a, w1b, w2a, w2b) =
                            (w.get(i1, a), w.get(i1, b), w.get(i2, a), w.get(i2, b));
                        dw.extend((0..k).map(|c| w1a[c] - w1b[c] - w2a[c] + w2b[c]));
                    }
                }
            }
        }
        Ok(Self {
            n,
            k,
            gamma,
            dv,
            dw,
            discordant,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Stored (unordered-orientation) tetrads after trimming.
    pub fn len(&self) -> usize {
        self.dv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dv.is_empty()
    }

    /// Ordered tetrads contributing to `Ĥₙ`.
    pub fn surviving_ordered(&self) -> u64 {
        4 * self.dv.len() as u64
    }

    /// Ordered tetrads with `|D̃| = 2` before trimming.
    pub fn discordant_ordered(&self) -> u64 {
        4 * self.discordant
    }

    /// `Σ sign(ṽ + W̃'θ)` over stored tetrads.
    pub fn sign_sum(&self, theta: &[f64]) -> i64 {
        assert_eq!(theta.len(), self.k, "theta dimension");
        self.dv
            .iter()
            .zip(self.dw.chunks_exact(self.k.max(1)))
            .map(|(v, w)| sign(v + w.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()))
            .sum()
    }

    /// `Ĥₙ(θ, γ)`: each stored tetrad contributes `2·sign` to four ordered tetrads.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        8.0 * self.sign_sum(theta) as f64 / ordered_tetrads(self.n)
    }
}

/// `Ĥₙ(θ, γ)` evaluated from scratch.
pub fn h_objective(net: &NetworkData, w: &PairMatrix, theta: &[f64], gamma: f64) -> Result<f64> {
    Ok(TetradSet::build(net, w, gamma)?.objective(theta))
}

fn quantile_type7(values: &mut [f64], q: f64) -> f64 {
    let m = values.len();
    let h = (m - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut a, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return a;
    }
    let b = upper.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Type-7 quantile of `|v_ak − v_al|` over agents `a` and pairs `k < l`
/// distinct from `a`.
pub fn gamma_quantile(net: &NetworkData, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!(
            "gamma quantile must lie in [0, 1], got {q}"
        )));
    }
    let n = net.n();
    if n < 3 {
        return Err(Error::InsufficientAgents(n));
    }
    let mut vals = Vec::with_capacity(n * (n - 1) * (n - 2) / 2);
    for a in 0..n {
        for k in 0..n {
            if k == a {
                continue;
            }
            for l in (k + 1)..n {
                if l != a {
                    vals.push((net.v(a, k) - net.v(a, l)).abs());
                }
            }
        }
    }
    Ok(quantile_type7(&mut vals, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    Fixed(f64),
    /// `scale · quantile_q(|Δv|)`.
    Quantile {
        q: f64,
        scale: f64,
    },
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::Quantile { q: 0.6, scale: 1.0 }
    }
}

impl GammaRule {
    pub fn resolve(&self, net: &NetworkData) -> Result<f64> {
        let g = match *self {
            GammaRule::Fixed(g) => g,
            GammaRule::Quantile { q, scale } => scale * gamma_quantile(net, q)?,
        };
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "trimming threshold must be finite and nonnegative, got {g}"
            )));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailOptimizer {
    Grid,
    /// Grid followed by one half-step pass over all neighbouring offsets.
    #[default]
    GridPolish,
}

fn default_grid() -> usize {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    /// Per-dimension `[lo, hi]`; empty means `[-5, 5]` in every dimension.
    #[serde(default)]
    pub theta_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub gamma: GammaRule,
    #[serde(default)]
    pub optimizer: TailOptimizer,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default)]
    pub combiner: PairCombiner,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            theta_box: Vec::new(),
            gamma: GammaRule::default(),
            optimizer: TailOptimizer::default(),
            grid_points: default_grid(),
            combiner: PairCombiner::default(),
        }
    }
}

impl TailConfig {
    pub fn bounds(&self, k: usize) -> Result<Vec<[f64; 2]>> {
        let b = if self.theta_box.is_empty() {
            vec![[-5.0, 5.0]; k]
        } else {
            self.theta_box.clone()
        };
        if b.len() != k {
            return Err(Error::InvalidConfig(format!(
                "theta_box has {} dimensions, expected {k}",
                b.len()
            )));
        }
        for [lo, hi] in &b {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "theta_box interval [{lo}, {hi}] is not a bounded interval"
                )));
            }
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig(
                "grid_points must be at least 2".into(),
            ));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone)]
pub struct TailFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub gamma: f64,
    pub surviving: u64,
    pub discordant: u64,
}

impl TailFit {
    pub fn report(&self, net: &NetworkData) -> EstimateReport {
        let trimmed = if self.discordant > 0 {
            1.0 - self.surviving as f64 / self.discordant as f64
        } else {
            0.0
        };
        EstimateReport {
            estimator: "tail".into(),
            n: net.n(),
            theta: self.theta.clone(),
            se: None,
            ci: None,
            ci_level: None,
            variance_mode: None,
            cond_gamma: None,
            trim_frac: Some(trimmed),
            floor_frac: None,
            degree: net.average_degree(),
            mean_heterogeneity: None,
            surviving_tetrads: Some(self.surviving),
            objective: Some(self.objective),
            notes: vec![format!("gamma = {}", self.gamma)],
        }
    }
}

/// Orders candidates: larger sign sum, then smaller norm, then lexicographic.
fn better(a: &(i64, Vec<f64>), b: &(i64, Vec<f64>)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    let na: f64 = a.1.iter().map(|x| x * x).sum();
    let nb: f64 = b.1.iter().map(|x| x * x).sum();
    if na != nb {
        return na < nb;
    }
    a.1.iter()
        .zip(&b.1)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Less)
}

fn pick(cands: Vec<(i64, Vec<f64>)>) -> (i64, Vec<f64>) {
    cands
        .into_iter()
        .reduce(|best, c| if better(&c, &best) { c } else { best })
        .expect("nonempty candidates")
}

/// Maximises `Ĥₙ` over a regular grid on the parameter box.
pub fn estimate_theta_tail(net: &NetworkData, cfg: &TailConfig) -> Result<TailFit> {
    let w = net.pair_covariates(&cfg.combiner);
    let k = w.k();
    let bounds = cfg.bounds(k)?;
    let gamma = cfg.gamma.resolve(net)?;
    let set = TetradSet::build(net, &w, gamma)?;
    if set.is_empty() {
        return Err(Error::TrimmingEmpty);
    }
    let g = cfg.grid_points;
    let step: Vec<f64> = bounds
        .iter()
        .map(|[lo, hi]| (hi - lo) / (g - 1) as f64)
        .collect();
    let point = |mut idx: usize| -> Vec<f64> {
        let mut t = vec![0.0; k];
        for c in (0..k).rev() {
            let [lo, _] = bounds[c];
            t[c] = lo + (idx % g) as f64 * step[c];
            idx /= g;
        }
        t
    };
    let total = g
        .checked_pow(k as u32)
        .ok_or_else(|| Error::InvalidConfig("grid too large".into()))?;
    let cands: Vec<(i64, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let t = point(idx);
            (set.sign_sum(&t), t)
        })
        .collect();
    let mut best = pick(cands);
    if cfg.optimizer == TailOptimizer::GridPolish {
        let centre = best.1.clone();
        let mut around = vec![best.clone()];
        for code in 0..3usize.pow(k as u32) {
            let mut c = code;
            let mut t = centre.clone();
            let mut moved = false;
            for d in 0..k {
                let off = (c % 3) as f64 - 1.0;
                c /= 3;
                if off != 0.0 {
                    moved = true;
                }
                t[d] = (t[d] + off * step[d] / 2.0).clamp(bounds[d][0], bounds[d][1]);
            }
            if moved {
                around.push((set.sign_sum(&t), t));
            }
        }
        best = pick(around);
    }
    Ok(TailFit {
        objective: 8.0 * best.0 as f64 / ordered_tetrads(net.n()),
        theta: best.1,
        gamma,
        surviving: set.surviving_ordered(),
        discordant: set.discordant_ordered(),
    })
}
