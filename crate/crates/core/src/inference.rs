//! Standard errors and confidence intervals for the closed-form estimator.
//!
//! The sandwich is `Σ̂ = Γ̂⁻¹ Υ̂ Γ̂⁻¹` with
//! `Υ̂ = 32/(n(n−1)) Σ_{i≠j} σ²_ij χ̄_ij χ̄_ij'`, `χ̄ = W̄`, and
//! `se = sqrt(diag Σ̂ / (n(n−1)))`. The dyad variance `σ²_ij` is either
//! computed from the latent fields (simulation only) or from a kernel
//! regression plug-in; a node bootstrap is available as a third route.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::estimator::{wbar, EstimateReport, SpecialFit, SpecialRegressor};
use crate::network::{dyads, NetworkData, PairMatrix, SymMatrix};
use crate::rng::{derive_seed, rng_from_seed};

/// Which parts of the dyad-level variance enter `σ²_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceComponents {
    /// `I·p(1−p)/f²` plus the squared deviation of `E[D*|ω]` from the
    /// linear index `W'θ + A_i + A_j`.
    #[default]
    Total,
    /// `I·p(1−p)/f²` only: the variance of `D*` given `(v, X_i, X_j, A)`.
    ConditionalOnV,
}

/// Sample analog of `χ̄`: the dyad projection of the tetrad difference.
pub fn chi_bar(w: &PairMatrix) -> PairMatrix {
    wbar(w)
}

/// `Υ̂ = 32/(n(n−1)) Σ_{i≠j} σ²_ij χ̄_ij χ̄_ij'`.
pub fn upsilon(chi: &PairMatrix, sigma2: &SymMatrix) -> DMatrix<f64> {
    let n = chi.n();
    let k = chi.k();
    let mut u = DMatrix::zeros(k, k);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = sigma2.get(i, j);
            if s == 0.0 {
                continue;
            }
            let x = chi.get(i, j);
            for r in 0..k {
                for c in 0..=r {
                    u[(r, c)] += s * x[r] * x[c];
                }
            }
        }
    }
    for r in 0..k {
        for c in 0..r {
            u[(c, r)] = u[(r, c)];
        }
    }
    u * (32.0 / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    OracleP,
    PluginP,
    Bootstrap,
}

impl VarianceMode {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMode::OracleP => "oracle_p",
            VarianceMode::PluginP => "plugin_p",
            VarianceMode::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub mode: VarianceMode,
    pub upsilon: Option<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    pub se: Vec<f64>,
    pub ci_level: f64,
    pub ci: Vec<(f64, f64)>,
    /// Trimmed mean of `p(1−p)/f`, reported descriptively.
    pub rho: Option<f64>,
    pub failures: usize,
    pub draws: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
}

impl VarianceReport {
    pub fn attach_to(&self, rep: &mut EstimateReport) {
        rep.se = Some(self.se.clone());
        rep.ci = Some(self.ci.clone());
        rep.ci_level = Some(self.ci_level);
        rep.variance_mode = Some(self.mode.label().into());
        rep.notes.extend(self.notes.iter().cloned());
    }

    /// `draw,theta_1..theta_K` lines for bootstrap runs.
    pub fn draws_csv(&self) -> Option<String> {
        let draws = self.draws.as_ref()?;
        let k = self.se.len();
        let mut s = String::from("draw");
        for c in 1..=k {
            s.push_str(&format!(",theta_{c}"));
        }
        s.push('\n');
        for (b, d) in draws.iter().enumerate() {
            s.push_str(&b.to_string());
            for t in d {
                s.push_str(&format!(",{t}"));
            }
            s.push('\n');
        }
        Some(s)
    }

    /// `√(n(n−1)) Σ̂^{−1/2} (θ̂ − θ₀)`.
    pub fn studentize(&self, n: usize, theta_hat: &[f64], theta0: &[f64]) -> Vec<f64> {
        let root = inverse_sqrt(&self.sigma);
        let diff = DVector::from_iterator(
            theta_hat.len(),
            theta_hat.iter().zip(theta0).map(|(a, b)| a - b),
        );
        let z = root * diff * ((n * (n - 1)) as f64).sqrt();
        z.iter().copied().collect()
    }

    pub fn min_sigma_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.sigma.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `A^{−1/2}` by symmetric eigendecomposition, eigenvalues floored at 1e-12.
pub fn inverse_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-12).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn normal_ci(theta: &[f64], se: &[f64], level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    Ok(theta
        .iter()
        .zip(se)
        .map(|(t, s)| (t - z * s, t + z * s))
        .collect())
}

fn sandwich(fit: &SpecialFit, ups: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ginv = fit
        .stats
        .gamma
        .clone()
        .try_inverse()
        .ok_or(Error::SingularGamma { cond: fit.cond })?;
    Ok(symmetrize(&ginv * ups * &ginv))
}

fn from_sigma(
    mode: VarianceMode,
    fit: &SpecialFit,
    n: usize,
    ups: DMatrix<f64>,
    rho: f64,
    level: f64,
) -> Result<VarianceReport> {
    let sigma = sandwich(fit, &ups)?;
    let scale = (n * (n - 1)) as f64;
    let se: Vec<f64> = (0..sigma.nrows())
        .map(|r| (sigma[(r, r)].max(0.0) / scale).sqrt())
        .collect();
    let ci = normal_ci(&fit.theta, &se, level)?;
    Ok(VarianceReport {
        mode,
        upsilon: Some(ups),
        sigma,
        se,
        ci_level: level,
        ci,
        rho: Some(rho),
        failures: 0,
        draws: None,
        notes: Vec::new(),
    })
}

/// Dyad variances given link probabilities `p` and the centre `m` of the
/// linear index.
fn dyad_sigma2(
    net: &NetworkData,
    fit: &SpecialFit,
    p: &SymMatrix,
    centre: &SymMatrix,
    components: VarianceComponents,
) -> (SymMatrix, f64) {
    let n = net.n();
    let mut s2 = SymMatrix::zeros(n);
    let (mut rho, mut kept) = (0.0, 0usize);
    for (i, j) in dyads(n) {
        let keep = fit.dstar.trim.keep(i, j);
        let f = fit.density.value(i, j);
        let pij = p.get(i, j);
        let mut s = 0.0;
        if keep {
            s = pij * (1.0 - pij) / (f * f);
            rho += pij * (1.0 - pij) / f;
            kept += 1;
        }
        if components == VarianceComponents::Total {
            let mean_dstar = if keep {
                (pij - (net.v(i, j) > 0.0) as u8 as f64) / f
            } else {
                0.0
            };
            s += (mean_dstar - centre.get(i, j)).powi(2);
        }
        s2.set(i, j, s);
    }
    (s2, if kept > 0 { rho / kept as f64 } else { 0.0 })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Oracle variance: `p_ij = F_U(v_ij + W_ij'θ₀ + A_i + A_j)` from the
/// latent fields of a simulated network.
pub fn variance_oracle_p(
    net: &NetworkData,
    fit: &SpecialFit,
    theta0: &[f64],
    u_dist: &Dist,
    components: VarianceComponents,
    level: f64,
) -> Result<VarianceReport> {
    let lat = net.latent().ok_or(Error::MissingLatent)?;
    if theta0.len() != fit.theta.len() {
        return Err(Error::InvalidConfig(
            "theta0 dimension does not match the estimate".into(),
        ));
    }
    let n = net.n();
    let mut p = SymMatrix::zeros(n);
    let mut centre = SymMatrix::zeros(n);
    for (i, j) in dyads(n) {
        let m = dot(fit.w.get(i, j), theta0) + lat.a[i] + lat.a[j];
        centre.set(i, j, m);
        p.set(i, j, u_dist.cdf(net.v(i, j) + m)?);
    }
    let (s2, rho) = dyad_sigma2(net, fit, &p, &centre, components);
    let ups = upsilon(&fit.wbar, &s2);
    let mut rep = from_sigma(VarianceMode::OracleP, fit, n, ups, rho, level)?;
    rep.notes
        .push("link probabilities from latent heterogeneity and the known shock CDF".into());
    Ok(rep)
}

/// Leave-one-out Nadaraya–Watson regression of `D_ij` on
/// `(v_ij, X_i, X_j)` over dyads `i < j`, Gaussian product kernel with
/// per-coordinate Scott bandwidths `sd·N^{−1/(d+4)}` times `smoothing`.
pub fn link_probability_nw(net: &NetworkData, smoothing: f64) -> Result<SymMatrix> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidBandwidth(smoothing));
    }
    let n = net.n();
    let k = net.k();
    let d = 1 + 2 * k;
    let pairs: Vec<(usize, usize)> = dyads(n).collect();
    let m = pairs.len();
    let mut z = vec![0.0; m * d];
    let mut y = vec![0.0; m];
    for (q, &(i, j)) in pairs.iter().enumerate() {
        z[q * d] = net.v(i, j);
        z[q * d + 1..q * d + 1 + k].copy_from_slice(net.x(i));
        z[q * d + 1 + k..q * d + 1 + 2 * k].copy_from_slice(net.x(j));
        y[q] = net.d(i, j) as f64;
    }
    let factor = (m as f64).powf(-1.0 / (d as f64 + 4.0)) * smoothing;
    let mut inv_bw = vec![0.0; d];
    for c in 0..d {
        let mean = (0..m).map(|q| z[q * d + c]).sum::<f64>() / m as f64;
        let var = (0..m).map(|q| (z[q * d + c] - mean).powi(2)).sum::<f64>() / m as f64;
        let bw = var.sqrt() * factor;
        // constant coordinates carry no information; drop them
        inv_bw[c] = if bw > 0.0 { 1.0 / bw } else { 0.0 };
    }
    for q in 0..m {
        for c in 0..d {
            z[q * d + c] *= inv_bw[c];
        }
    }
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    for p in 0..m {
        let zp = &z[p * d..(p + 1) * d];
        for q in (p + 1)..m {
            let zq = &z[q * d..(q + 1) * d];
            let mut e = 0.0;
            for c in 0..d {
                let t = zp[c] - zq[c];
                e += t * t;
            }
            if e > 1490.0 {
                continue;
            }
            let w = (-0.5 * e).exp();
            num[p] += w * y[q];
            den[p] += w;
            num[q] += w * y[p];
            den[q] += w;
        }
    }
    let mut out = SymMatrix::zeros(n);
    for (q, &(i, j)) in pairs.iter().enumerate() {
        if !(den[q] > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel regression is degenerate at dyad ({i}, {j}): no neighbours within the bandwidth"
            )));
        }
        out.set(i, j, num[q] / den[q]);
    }
    Ok(out)
}

/// Two-way additive fit `r_ij ≈ a_i + a_j` by least squares over dyads.
pub fn additive_effects(r: &SymMatrix) -> Vec<f64> {
    let n = r.n();
    let rows: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| r.get(i, j)).sum())
        .collect();
    let total_unordered = rows.iter().sum::<f64>() / 2.0;
    let s = total_unordered / (n - 1) as f64;
    rows.iter().map(|ri| (ri - s) / (n - 2) as f64).collect()
}

/// Feasible variance. With [`VarianceComponents::Total`], `σ²_ij` is the
/// squared residual `(D*_ij − W_ij'θ̂ − â_i − â_j)²`, with `â` from an
/// additive fit of `D* − W'θ̂`. With [`VarianceComponents::ConditionalOnV`],
/// `σ²_ij = I·p̂(1−p̂)/f²` with `p̂` from [`link_probability_nw`].
pub fn variance_plugin_p(
    net: &NetworkData,
    fit: &SpecialFit,
    smoothing: f64,
    components: VarianceComponents,
    level: f64,
) -> Result<VarianceReport> {
    let n = net.n();
    let (s2, rho, note) = match components {
        VarianceComponents::Total => {
            let resid = SymMatrix::from_upper(n, |i, j| {
                fit.dstar.dstar.get(i, j) - dot(fit.w.get(i, j), &fit.theta)
            });
            let a = additive_effects(&resid);
            let s2 = SymMatrix::from_upper(n, |i, j| (resid.get(i, j) - a[i] - a[j]).powi(2));
            (
                s2,
                None,
                "plug-in: squared residuals of D* on W'theta-hat plus additive agent effects",
            )
        }
        VarianceComponents::ConditionalOnV => {
            let p = link_probability_nw(net, smoothing)?;
            let zero = SymMatrix::zeros(n);
            let (s2, rho) = dyad_sigma2(net, fit, &p, &zero, components);
            (
                s2,
                Some(rho),
                "plug-in: link probability from a kernel regression on (v, X_i, X_j)",
            )
        }
    };
    let ups = upsilon(&fit.wbar, &s2);
    let mut rep = from_sigma(
        VarianceMode::PluginP,
        fit,
        n,
        ups,
        rho.unwrap_or(f64::NAN),
        level,
    )?;
    rep.rho = rho;
    rep.notes.push(note.into());
    Ok(rep)
}

/// Multiplicity counts of a with-replacement resample of `n` agents.
pub fn resample_counts(n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut c = vec![0.0; n];
    for _ in 0..n {
        c[rng.random_range(0..n)] += 1.0;
    }
    c
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Node bootstrap: draw `b` agent resamples, re-estimate on each, report
/// the across-draw standard deviation and percentile intervals.
pub fn bootstrap_se(
    net: &NetworkData,
    est: &SpecialRegressor,
    fit: &SpecialFit,
    b: usize,
    seed: u64,
    level: f64,
) -> Result<VarianceReport> {
    if b < 50 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 50 draws, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = net.n();
    let results: Vec<Result<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| est.fit_weighted(net, &resample_counts(n, derive_seed(seed, &[r as u64]))))
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(t) => draws.push(t),
            Err(Error::SingularGamma { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed * 5 > b {
        return Err(Error::BootstrapFailed { failed, total: b });
    }
    if draws.len() < 2 {
        return Err(Error::BootstrapFailed { failed, total: b });
    }
    let k = fit.theta.len();
    let m = draws.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|c| draws.iter().map(|d| d[c]).sum::<f64>() / m)
        .collect();
    let mut cov = DMatrix::zeros(k, k);
    for d in &draws {
        for r in 0..k {
            for c in 0..k {
                cov[(r, c)] += (d[r] - mean[r]) * (d[c] - mean[c]);
            }
        }
    }
    cov /= m - 1.0;
    let se: Vec<f64> = (0..k).map(|c| cov[(c, c)].sqrt()).collect();
    let alpha = (1.0 - level) / 2.0;
    let ci = (0..k)
        .map(|c| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            v.sort_by(f64::total_cmp);
            (quantile_sorted(&v, alpha), quantile_sorted(&v, 1.0 - alpha))
        })
        .collect();
    let mut notes = vec![format!("node bootstrap with {b} draws")];
    if failed > 0 {
        notes.push(format!("{failed} draws skipped: singular Gamma-hat"));
    }
    Ok(VarianceReport {
        mode: VarianceMode::Bootstrap,
        upsilon: None,
        sigma: cov * (n * (n - 1)) as f64,
        se,
        ci_level: level,
        ci,
        rho: None,
        failures: failed,
        draws: Some(draws),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_network, DgpConfig};
    use crate::kde::DensityPolicy;
    use approx::assert_abs_diff_eq;

    fn known() -> SpecialRegressor {
        SpecialRegressor::new(DensityPolicy::Known(Dist::normal_sd(0.0, 2.0)))
    }

    #[test]
    fn chi_bar_matches_tetrad_average() {
        let net = simulate_network(
            &DgpConfig {
                n: 6,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let w = net.pair_covariates(&Default::default());
        let chi = chi_bar(&w);
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let (mut s, mut m) = (0.0, 0.0);
                for a in 0..6 {
                    for b in 0..6 {
                        if a == b || [i, j].contains(&a) || [i, j].contains(&b) {
                            continue;
                        }
                        s += w.get(i, j)[0] - w.get(i, b)[0] - w.get(a, j)[0] + w.get(a, b)[0];
                        m += 1.0;
                    }
                }
                assert_abs_diff_eq!(chi.get(i, j)[0], s / m, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn equal_covariates_give_zero_chi() {
        let w = PairMatrix::from_fn(7, 2, |_, _, o| o.copy_from_slice(&[0.3, -1.0]));
        let chi = chi_bar(&w);
        assert!((0..7).all(|i| (0..7).all(|j| chi.get(i, j).iter().all(|x| x.abs() < 1e-14))));
    }

    #[test]
    fn upsilon_is_quadratic_in_chi() {
        let net = simulate_network(
            &DgpConfig {
                n: 12,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let chi = chi_bar(&net.pair_covariates(&Default::default()));
        let s2 = SymMatrix::from_upper(12, |i, j| 0.1 + (i * j) as f64 * 0.01);
        let a = upsilon(&chi, &s2);
        let doubled = PairMatrix::from_fn(12, 1, |i, j, o| o[0] = 2.0 * chi.get(i, j)[0]);
        let b = upsilon(&doubled, &s2);
        assert_abs_diff_eq!(
            b[(0, 0)],
            4.0 * a[(0, 0)],
            epsilon = 1e-12 * a[(0, 0)].abs()
        );
    }

    #[test]
    fn degenerate_probabilities_zero_upsilon() {
        let u = Dist::beta(2.0, 2.0, -1e6);
        let cfg = DgpConfig {
            n: 20,
            u_dist: u.clone(),
            ..Default::default()
        };
        let net = simulate_network(&cfg, 1).unwrap();
        let fit = known().fit(&net).unwrap();
        let rep = variance_oracle_p(
            &net,
            &fit,
            &[1.5],
            &u,
            VarianceComponents::ConditionalOnV,
            0.95,
        )
        .unwrap();
        assert_eq!(rep.upsilon.unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn constant_links_zero_plugin_upsilon() {
        let cfg = DgpConfig {
            n: 20,
            u_dist: Dist::beta(2.0, 2.0, -1e6),
            ..Default::default()
        };
        let net = simulate_network(&cfg, 2).unwrap();
        let p = link_probability_nw(&net, 1.0).unwrap();
        assert!(dyads(20).all(|(i, j)| p.get(i, j) == 1.0));
        let fit = known().fit(&net).unwrap();
        let rep =
            variance_plugin_p(&net, &fit, 1.0, VarianceComponents::ConditionalOnV, 0.95).unwrap();
        assert_eq!(rep.upsilon.unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn oracle_requires_latent_fields() {
        let net = simulate_network(
            &DgpConfig {
                n: 20,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let fit = known().fit(&net).unwrap();
        let bare = net.without_latent();
        let r = variance_oracle_p(
            &bare,
            &fit,
            &[1.5],
            &Dist::beta(2.0, 2.0, -0.5),
            Default::default(),
            0.95,
        );
        assert!(matches!(r, Err(Error::MissingLatent)));
    }

    #[test]
    fn reports_are_psd_and_cover_estimate() {
        let cfg = DgpConfig {
            n: 40,
            ..Default::default()
        };
        let net = simulate_network(&cfg, 5).unwrap();
        let fit = known().fit(&net).unwrap();
        for rep in [
            variance_oracle_p(
                &net,
                &fit,
                &[1.5],
                &cfg.u_dist,
                VarianceComponents::Total,
                0.95,
            )
            .unwrap(),
            variance_oracle_p(
                &net,
                &fit,
                &[1.5],
                &cfg.u_dist,
                VarianceComponents::ConditionalOnV,
                0.9,
            )
            .unwrap(),
            variance_plugin_p(&net, &fit, 1.0, VarianceComponents::Total, 0.95).unwrap(),
            variance_plugin_p(&net, &fit, 1.0, VarianceComponents::ConditionalOnV, 0.95).unwrap(),
        ] {
            assert!(rep.min_sigma_eigenvalue() >= -1e-10);
            assert!(rep.se[0] > 0.0);
            assert!(rep.ci[0].0 <= fit.theta[0] && fit.theta[0] <= rep.ci[0].1);
        }
    }

    #[test]
    fn additive_fit_recovers_exact_effects() {
        let a = [0.3, -0.2, 1.1, 0.0, -0.7, 0.25];
        let r = SymMatrix::from_upper(6, |i, j| a[i] + a[j]);
        let got = additive_effects(&r);
        for (x, y) in got.iter().zip(a) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_counts_reproduce_point_estimate() {
        let net = simulate_network(
            &DgpConfig {
                n: 30,
                ..Default::default()
            },
            8,
        )
        .unwrap();
        for est in [
            known(),
            SpecialRegressor::new(DensityPolicy::Kernel {
                kernel: crate::kde::KernelSpec::gaussian(0.3).unwrap(),
                conditional: false,
            }),
        ] {
            let fit = est.fit(&net).unwrap();
            let t = est.fit_weighted(&net, &[1.0; 30]).unwrap();
            assert!((t[0] - fit.theta[0]).abs() < 1e-10 * fit.theta[0].abs().max(1.0));
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let net = simulate_network(
            &DgpConfig {
                n: 25,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let est = known();
        let fit = est.fit(&net).unwrap();
        let a = bootstrap_se(&net, &est, &fit, 50, 77, 0.95).unwrap();
        let b = bootstrap_se(&net, &est, &fit, 50, 77, 0.95).unwrap();
        assert_eq!(a.se[0].to_bits(), b.se[0].to_bits());
        assert_eq!(a.draws, b.draws);
        assert!(a.draws_csv().unwrap().starts_with("draw,theta_1\n0,"));
        assert!(bootstrap_se(&net, &est, &fit, 10, 77, 0.95).is_err());
    }

    #[test]
    fn resample_counts_sum_to_n() {
        let c = resample_counts(40, 3);
        assert_eq!(c.iter().sum::<f64>(), 40.0);
        assert_ne!(c, resample_counts(40, 4));
    }

    #[test]
    fn studentized_uses_sigma_root() {
        let rep = VarianceReport {
            mode: VarianceMode::OracleP,
            upsilon: None,
            sigma: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])),
            se: vec![0.0, 0.0],
            ci_level: 0.95,
            ci: vec![],
            rho: None,
            failures: 0,
            draws: None,
            notes: vec![],
        };
        let z = rep.studentize(5, &[1.0, 1.0], &[0.0, 0.0]);
        assert_abs_diff_eq!(z[0], 20f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 20f64.sqrt() / 3.0, epsilon = 1e-12);
    }
}
