//! Closed-form special-regressor estimator
//! `θ̂ = Γ̂⁻¹Ψ̂` built from tetrad double differences.
//!
//! Writing the tetrad average through the dyad projection
//! `W̄_ij = avg_{(s,t)} W̃(i, j; s, t)` turns both moments into `O(n²)` dyad
//! sums:
//! `Ψ̂ = 4/(n(n−1)) Σ_{i≠j} D*_ij W̄_ij` and
//! `Γ̂ = 4/(n(n−1)) Σ_{i≠j} W_ij W̄_ij' = 4(n−3)/(n(n−1)²) Σ_{i≠j} W̄_ij W̄_ij'`,
//! the last form holding because the rows and columns of `W̄` sum to zero.
//! The `O(n⁴)` enumeration is kept as the reference implementation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{DensityField, DensityPolicy, DEFAULT_DENSITY_FLOOR};
use crate::network::{
    dyad_count, dyads, tetrad_count, tetrads, NetworkData, PairCombiner, PairMatrix, SymMatrix,
};

pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrimPolicy {
    /// Keep dyads with `|v_ij| < c·std(v)`.
    FixedVBand {
        #[serde(default = "two")]
        c: f64,
    },
    /// Keep dyads whose `(v_ij, X_i, X_j)` lies farther than `tau` from the
    /// boundary of the sample bounding box.
    SupportDistance {
        tau: f64,
    },
    None,
}

fn two() -> f64 {
    2.0
}

impl Default for TrimPolicy {
    fn default() -> Self {
        TrimPolicy::FixedVBand { c: 2.0 }
    }
}

/// Per-dyad trimming indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimMask {
    n: usize,
    keep: Vec<bool>,
}

impl TrimMask {
    pub fn all(n: usize) -> Self {
        Self {
            n,
            keep: vec![true; n * n],
        }
    }

    #[inline]
    pub fn keep(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.n + j]
    }

    pub fn trimmed_fraction(&self) -> f64 {
        let m = dyads(self.n).filter(|&(i, j)| !self.keep(i, j)).count();
        m as f64 / dyad_count(self.n).max(1) as f64
    }
}

impl TrimPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TrimPolicy::FixedVBand { c } if !(c > 0.0 && c.is_finite()) => Err(
                Error::InvalidConfig(format!("trim multiplier must be positive, got {c}")),
            ),
            TrimPolicy::SupportDistance { tau } if !(tau > 0.0 && tau.is_finite()) => Err(
                Error::InvalidConfig(format!("trim distance must be positive, got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn mask(&self, net: &NetworkData) -> Result<TrimMask> {
        self.mask_weighted(net, None)
    }

    /// Mask under agent multiplicity weights; the band and box use the
    /// dyads present in the weighted sample.
    pub fn mask_weighted(&self, net: &NetworkData, weights: Option<&[f64]>) -> Result<TrimMask> {
        self.validate()?;
        let n = net.n();
        let wt = |i: usize, j: usize| weights.map_or(1.0, |c| c[i] * c[j]);
        let mut mask = TrimMask::all(n);
        let mut set = |i: usize, j: usize, keep: bool| {
            mask.keep[i * n + j] = keep;
            mask.keep[j * n + i] = keep;
        };
        match *self {
            TrimPolicy::None => {}
            TrimPolicy::FixedVBand { c } => {
                let (mut s0, mut s1) = (0.0, 0.0);
                for (i, j) in dyads(n) {
                    s0 += wt(i, j);
                    s1 += wt(i, j) * net.v(i, j);
                }
                let mean = s1 / s0;
                let var = dyads(n)
                    .map(|(i, j)| wt(i, j) * (net.v(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / s0;
                let band = c * var.sqrt();
                for (i, j) in dyads(n) {
                    set(i, j, net.v(i, j).abs() < band);
                }
            }
            TrimPolicy::SupportDistance { tau } => {
                let present = |i: usize| weights.is_none_or(|c| c[i] > 0.0);
                let (mut vlo, mut vhi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (i, j) in dyads(n).filter(|&(i, j)| present(i) && present(j)) {
                    vlo = vlo.min(net.v(i, j));
                    vhi = vhi.max(net.v(i, j));
                }
                let k = net.k();
                let mut xlo = vec![f64::INFINITY; k];
                let mut xhi = vec![f64::NEG_INFINITY; k];
                for i in (0..n).filter(|&i| present(i)) {
                    for c in 0..k {
                        xlo[c] = xlo[c].min(net.x(i)[c]);
                        xhi[c] = xhi[c].max(net.x(i)[c]);
                    }
                }
                let inside = |z: f64, lo: f64, hi: f64| z - lo > tau && hi - z > tau;
                for (i, j) in dyads(n) {
                    let keep = inside(net.v(i, j), vlo, vhi)
                        && (0..k).all(|c| {
                            inside(net.x(i)[c], xlo[c], xhi[c])
                                && inside(net.x(j)[c], xlo[c], xhi[c])
                        });
                    set(i, j, keep);
                }
            }
        }
        Ok(mask)
    }
}

/// Transformed outcome `D*_ij = (D_ij − 1[v_ij > 0]) / f̂_ij · I_ij` and
/// `φ_ij = (D_ij − 1[v_ij > 0]) · I_ij`.
#[derive(Debug, Clone)]
pub struct DStar {
    pub dstar: SymMatrix,
    pub phi: SymMatrix,
    pub trim: TrimMask,
}

pub fn dstar(net: &NetworkData, dens: &DensityField, trim: &TrimMask) -> Result<DStar> {
    let n = net.n();
    if dens.n() != n {
        return Err(Error::InvalidNetwork(
            "density field does not match network".into(),
        ));
    }
    let mut ds = SymMatrix::zeros(n);
    let mut phi = SymMatrix::zeros(n);
    for (i, j) in dyads(n) {
        let f = dens.value(i, j);
        if !(f >= dens.floor()) && !dens.is_floored(i, j) || !(f > 0.0) {
            return Err(Error::DensityContract { i, j, value: f });
        }
        if !trim.keep(i, j) {
            continue;
        }
        let p = net.d(i, j) as f64 - (net.v(i, j) > 0.0) as u8 as f64;
        phi.set(i, j, p);
        ds.set(i, j, p / f);
    }
    Ok(DStar {
        dstar: ds,
        phi,
        trim: trim.clone(),
    })
}

/// Dyad projection of the tetrad difference:
/// `W̄_ij = [(n−2)(n−3)]⁻¹ Σ_{s≠t ∉ {i,j}} (W_ij − W_it − W_sj + W_st)`.
pub fn wbar(w: &PairMatrix) -> PairMatrix {
    let n = w.n();
    let k = w.k();
    assert!(n >= 4, "projection needs at least four agents");
    let mut row = vec![0.0; n * k];
    let mut col = vec![0.0; n * k];
    let mut total = vec![0.0; k];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for (c, x) in w.get(i, j).iter().enumerate() {
                row[i * k + c] += x;
                col[j * k + c] += x;
                total[c] += x;
            }
        }
    }
    let a = 1.0 / (n - 2) as f64;
    let b = 1.0 / ((n - 2) * (n - 3)) as f64;
    PairMatrix::from_fn(n, k, |i, j, out| {
        let wij = w.get(i, j);
        let wji = w.get(j, i);
        for c in 0..k {
            let rest_i = row[i * k + c] - wij[c];
            let rest_j = col[j * k + c] - wij[c];
            let rest = total[c] - row[i * k + c] - col[i * k + c] - row[j * k + c] - col[j * k + c]
                + wij[c]
                + wji[c];
            out[c] = wij[c] - a * rest_i - a * rest_j + b * rest;
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    #[default]
    Fast,
}

#[derive(Debug, Clone)]
pub struct TetradStats {
    pub gamma: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub m_n: u64,
    pub method: Method,
}

/// Direct average over all `n(n−1)(n−2)(n−3)` ordered tetrads.
pub fn tetrad_moments_naive(w: &PairMatrix, dstar: &SymMatrix) -> Result<TetradStats> {
    let n = w.n();
    let m_n = tetrad_count(n)?;
    if n > 40 {
        log::warn!("naive tetrad enumeration at n = {n} visits {m_n} tetrads");
    }
    let k = w.k();
    let mut gamma = DMatrix::zeros(k, k);
    let mut psi = DVector::zeros(k);
    let mut wt = vec![0.0; k];
    for t in tetrads(n) {
        let (i1, i2, j1, j2) = (t.i1, t.i2, t.j1, t.j2);
        for (c, x) in wt.iter_mut().enumerate() {
            *x = (w.get(i1, j1)[c] - w.get(i1, j2)[c]) - (w.get(i2, j1)[c] - w.get(i2, j2)[c]);
        }
        let dt = (dstar.get(i1, j1) - dstar.get(i1, j2)) - (dstar.get(i2, j1) - dstar.get(i2, j2));
        for r in 0..k {
            psi[r] += wt[r] * dt;
            for c in 0..k {
                gamma[(r, c)] += wt[r] * wt[c];
            }
        }
    }
    let m = m_n as f64;
    Ok(TetradStats {
        gamma: gamma / m,
        psi: psi / m,
        m_n,
        method: Method::Naive,
    })
}

/// `O(n²K²)` evaluation through the dyad projection.
pub fn tetrad_moments_fast(w: &PairMatrix, dstar: &SymMatrix) -> Result<TetradStats> {
    let n = w.n();
    let m_n = tetrad_count(n)?;
    let wb = wbar(w);
    let (gamma, psi) = projected_moments(&wb, dstar);
    Ok(TetradStats {
        gamma,
        psi,
        m_n,
        method: Method::Fast,
    })
}

fn projected_moments(wb: &PairMatrix, dstar: &SymMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let n = wb.n();
    let k = wb.k();
    let mut gamma = DMatrix::zeros(k, k);
    let mut psi = DVector::zeros(k);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let x = wb.get(i, j);
            let y = dstar.get(i, j);
            for r in 0..k {
                psi[r] += y * x[r];
                for c in 0..=r {
                    gamma[(r, c)] += x[r] * x[c];
                }
            }
        }
    }
    for r in 0..k {
        for c in 0..r {
            gamma[(c, r)] = gamma[(r, c)];
        }
    }
    let s = 4.0 / (n * (n - 1)) as f64;
    let g = s * (n - 3) as f64 / (n - 1) as f64;
    (gamma * g, psi * s)
}

pub fn tetrad_moments(w: &PairMatrix, dstar: &SymMatrix, method: Method) -> Result<TetradStats> {
    match method {
        Method::Naive => tetrad_moments_naive(w, dstar),
        Method::Fast => tetrad_moments_fast(w, dstar),
    }
}

/// Tetrad moments under agent multiplicity weights `c`: each ordered tetrad
/// of distinct agents counts `c_{i1} c_{j1} c_{i2} c_{j2}` times. Returns
/// `(Γ̂, Ψ̂)` normalized by the total tetrad weight.
pub fn tetrad_moments_weighted(
    w: &PairMatrix,
    dstar: &SymMatrix,
    c: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = w.n();
    tetrad_count(n)?;
    if c.len() != n {
        return Err(Error::InvalidConfig(
            "weight vector does not match n".into(),
        ));
    }
    let k = w.k();
    let ctot: f64 = c.iter().sum();
    let qtot: f64 = c.iter().map(|x| x * x).sum();
    let mut r1 = vec![0.0; n * k];
    let mut r2 = vec![0.0; n * k];
    let mut t1 = vec![0.0; k];
    for i in 0..n {
        for s in 0..n {
            if s == i {
                continue;
            }
            for (q, x) in w.get(i, s).iter().enumerate() {
                r1[i * k + q] += c[s] * x;
                r2[i * k + q] += c[s] * c[s] * x;
                t1[q] += c[i] * c[s] * x;
            }
        }
    }
    let mut gamma = DMatrix::zeros(k, k);
    let mut psi = DVector::zeros(k);
    let mut m = vec![0.0; k];
    for i in 0..n {
        if c[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if j == i || c[j] == 0.0 {
                continue;
            }
            let (ci, cj) = (c[i], c[j]);
            let cc = ctot - ci - cj;
            let qq = qtot - ci * ci - cj * cj;
            let wij = w.get(i, j);
            for q in 0..k {
                let x = wij[q];
                let left = cc * (r1[i * k + q] - cj * x) - (r2[i * k + q] - cj * cj * x);
                let right = cc * (r1[j * k + q] - ci * x) - (r2[j * k + q] - ci * ci * x);
                let rest =
                    t1[q] - 2.0 * ci * r1[i * k + q] - 2.0 * cj * r1[j * k + q] + 2.0 * ci * cj * x;
                m[q] = x * (cc * cc - qq) - left - right + rest;
            }
            let wgt = ci * cj;
            let y = dstar.get(i, j);
            for r in 0..k {
                psi[r] += wgt * y * m[r];
                for s in 0..k {
                    gamma[(r, s)] += wgt * wij[r] * m[s];
                }
            }
        }
    }
    let p = |e: i32| c.iter().map(|x| x.powi(e)).sum::<f64>();
    let (p1, p2, p3, p4) = (p(1), p(2), p(3), p(4));
    let norm = p1.powi(4) - 6.0 * p1 * p1 * p2 + 3.0 * p2 * p2 + 8.0 * p1 * p3 - 6.0 * p4;
    if !(norm > 0.0) {
        return Err(Error::SingularGamma {
            cond: f64::INFINITY,
        });
    }
    let gamma = (&gamma + gamma.transpose()) * (2.0 / norm);
    Ok((gamma, psi * (4.0 / norm)))
}

/// Eigenvalue condition number of a symmetric matrix (`∞` when not PD).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    condition_number_scaled(a, 0.0)
}

/// As [`condition_number`], also treating eigenvalues below `1e-13·scale`
/// as zero. `scale` should bound the magnitude of the matrix entries.
pub fn condition_number_scaled(a: &DMatrix<f64>, scale: f64) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lo > 1e-13 * scale) || !(lo > 0.0) || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Scale reference for Γ̂: `16 · mean_{i≠j} ‖W_ij‖²` bounds every entry.
pub fn gamma_scale(w: &PairMatrix) -> f64 {
    let n = w.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += w.get(i, j).iter().map(|x| x * x).sum::<f64>();
            }
        }
    }
    16.0 * s / (n * (n - 1)).max(1) as f64
}

/// Solves `Γ̂ θ = Ψ̂` by Cholesky after the condition-number gate.
pub fn solve_theta(gamma: &DMatrix<f64>, psi: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
    solve_theta_scaled(gamma, psi, 0.0)
}

pub fn solve_theta_scaled(
    gamma: &DMatrix<f64>,
    psi: &DVector<f64>,
    scale: f64,
) -> Result<(Vec<f64>, f64)> {
    let cond = condition_number_scaled(gamma, scale);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::SingularGamma { cond });
    }
    let chol = gamma
        .clone()
        .cholesky()
        .ok_or(Error::SingularGamma { cond })?;
    let theta = chol.solve(psi);
    Ok((theta.iter().copied().collect(), cond))
}

/// Dyad mean of `D*` minus dyad mean of `W` times `θ̂`.
pub fn estimate_mean_heterogeneity(w: &PairMatrix, dstar: &SymMatrix, theta: &[f64]) -> f64 {
    let n = w.n();
    let m = dyad_count(n) as f64;
    let dmean = dyads(n).map(|(i, j)| dstar.get(i, j)).sum::<f64>() / m;
    let wmean = w.dyad_mean();
    dmean - wmean.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
}

/// Pipeline settings for the closed-form estimator.
#[derive(Debug, Clone)]
pub struct SpecialRegressor {
    pub combiner: PairCombiner,
    pub density: DensityPolicy,
    pub density_floor: f64,
    pub trim: TrimPolicy,
    pub method: Method,
}

impl SpecialRegressor {
    pub fn new(density: DensityPolicy) -> Self {
        Self {
            combiner: PairCombiner::Product,
            density,
            density_floor: DEFAULT_DENSITY_FLOOR,
            trim: TrimPolicy::default(),
            method: Method::Fast,
        }
    }

    pub fn fit(&self, net: &NetworkData) -> Result<SpecialFit> {
        tetrad_count(net.n())?;
        let w = net.pair_covariates(&self.combiner);
        let density = self.density.fit(net, self.density_floor)?;
        let mask = self.trim.mask(net)?;
        let ds = dstar(net, &density, &mask)?;
        let stats = tetrad_moments(&w, &ds.dstar, self.method)?;
        let (theta, cond) = solve_theta_scaled(&stats.gamma, &stats.psi, gamma_scale(&w))?;
        let mean_het = estimate_mean_heterogeneity(&w, &ds.dstar, &theta);
        let wbar = wbar(&w);
        Ok(SpecialFit {
            theta,
            cond,
            stats,
            w,
            wbar,
            density,
            dstar: ds,
            mean_heterogeneity: mean_het,
        })
    }

    /// Point estimate for the sample in which agent `i` appears `c_i` times.
    pub fn fit_weighted(&self, net: &NetworkData, c: &[f64]) -> Result<Vec<f64>> {
        let w = net.pair_covariates(&self.combiner);
        let density = self
            .density
            .fit_weighted(net, Some(c), self.density_floor)?;
        let mask = self.trim.mask_weighted(net, Some(c))?;
        let ds = dstar(net, &density, &mask)?;
        let (gamma, psi) = tetrad_moments_weighted(&w, &ds.dstar, c)?;
        solve_theta_scaled(&gamma, &psi, gamma_scale(&w)).map(|r| r.0)
    }
}

/// Everything computed along the way, reused by the variance estimators.
#[derive(Debug, Clone)]
pub struct SpecialFit {
    pub theta: Vec<f64>,
    pub cond: f64,
    pub stats: TetradStats,
    pub w: PairMatrix,
    pub wbar: PairMatrix,
    pub density: DensityField,
    pub dstar: DStar,
    pub mean_heterogeneity: f64,
}

impl SpecialFit {
    pub fn report(&self, net: &NetworkData) -> EstimateReport {
        EstimateReport {
            estimator: "special".into(),
            n: net.n(),
            theta: self.theta.clone(),
            se: None,
            ci: None,
            ci_level: None,
            variance_mode: None,
            cond_gamma: Some(self.cond),
            trim_frac: Some(self.dstar.trim.trimmed_fraction()),
            floor_frac: Some(self.density.floor_fraction()),
            degree: net.average_degree(),
            mean_heterogeneity: Some(self.mean_heterogeneity),
            surviving_tetrads: None,
            objective: None,
            notes: Vec::new(),
        }
    }
}

/// Flat summary of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub n: usize,
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub ci_level: Option<f64>,
    pub variance_mode: Option<String>,
    pub cond_gamma: Option<f64>,
    pub trim_frac: Option<f64>,
    pub floor_frac: Option<f64>,
    pub degree: f64,
    pub mean_heterogeneity: Option<f64>,
    pub surviving_tetrads: Option<u64>,
    pub objective: Option<f64>,
    pub notes: Vec<String>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl EstimateReport {
    pub fn csv_header(&self) -> String {
        let k = self.theta.len();
        let mut cols: Vec<String> = (1..=k).map(|c| format!("theta_{c}")).collect();
        cols.extend((1..=k).map(|c| format!("se_{c}")));
        cols.extend(["cond_gamma", "trim_frac", "floor_frac", "degree"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let k = self.theta.len();
        let mut f: Vec<String> = self.theta.iter().map(|t| t.to_string()).collect();
        f.extend((0..k).map(|c| opt(self.se.as_ref().map(|s| s[c]))));
        f.push(opt(self.cond_gamma));
        f.push(opt(self.trim_frac));
        f.push(opt(self.floor_frac));
        f.push(self.degree.to_string());
        f.join(",")
    }

    /// `key = value` lines.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        writeln!(s, "estimator = {}", self.estimator).unwrap();
        writeln!(s, "n = {}", self.n).unwrap();
        for (c, t) in self.theta.iter().enumerate() {
            writeln!(s, "theta_{} = {}", c + 1, t).unwrap();
        }
        if let Some(se) = &self.se {
            for (c, e) in se.iter().enumerate() {
                writeln!(s, "se_{} = {}", c + 1, e).unwrap();
            }
        }
        if let (Some(ci), Some(level)) = (&self.ci, self.ci_level) {
            for (c, (lo, hi)) in ci.iter().enumerate() {
                writeln!(
                    s,
                    "ci{}_{} = [{}, {}]",
                    (level * 100.0).round(),
                    c + 1,
                    lo,
                    hi
                )
                .unwrap();
            }
        }
        if let Some(m) = &self.variance_mode {
            writeln!(s, "variance_mode = {m}").unwrap();
        }
        for (key, v) in [
            ("cond_gamma", self.cond_gamma),
            ("trim_frac", self.trim_frac),
            ("floor_frac", self.floor_frac),
            ("mean_heterogeneity", self.mean_heterogeneity),
            ("objective", self.objective),
        ] {
            if let Some(v) = v {
                writeln!(s, "{key} = {v}").unwrap();
            }
        }
        if let Some(t) = self.surviving_tetrads {
            writeln!(s, "surviving_tetrads = {t}").unwrap();
        }
        writeln!(s, "degree = {}", self.degree).unwrap();
        for note in &self.notes {
            writeln!(s, "note = {note}").unwrap();
        }
        s
    }
}
