//! Leave-two-out kernel density estimation on dyadic data.
//!
//! The density at dyad `(i, j)` is estimated from the pairs `(k1, k2)` that
//! share no agent with `(i, j)`. Dyads are kept sorted by `v` so each target
//! only visits the window where the kernel is nonzero in floating point.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::network::{dyads, NetworkData, SymMatrix};

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-4;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Beyond this |u| the Gaussian factor underflows to exactly 0.
const GAUSSIAN_RADIUS: f64 = 38.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKernel {
    Gaussian,
    Epanechnikov,
}

impl BaseKernel {
    #[inline]
    fn eval(self, u: f64) -> f64 {
        match self {
            BaseKernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            BaseKernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ u^{2k} K(u) du`.
    fn even_moment(self, k: usize) -> f64 {
        match self {
            BaseKernel::Gaussian => (1..=k).map(|r| (2 * r - 1) as f64).product(),
            BaseKernel::Epanechnikov => 3.0 / (((2 * k + 1) * (2 * k + 3)) as f64),
        }
    }

    fn radius(self) -> f64 {
        match self {
            BaseKernel::Gaussian => GAUSSIAN_RADIUS,
            BaseKernel::Epanechnikov => 1.0,
        }
    }
}

/// Product-form kernel `K(u) = P(u²)·K₀(u)` with a common bandwidth.
///
/// For `order = 2M` the polynomial has degree `M − 1` in `u²`, chosen so
/// that `∫K = 1` and the even moments `2, …, 2M − 2` vanish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParams", into = "KernelParams")]
pub struct KernelSpec {
    base: BaseKernel,
    order: usize,
    h: f64,
    coef: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default = "default_base")]
    pub base: BaseKernel,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_base() -> BaseKernel {
    BaseKernel::Gaussian
}
fn default_order() -> usize {
    2
}
fn default_h() -> f64 {
    0.025
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            base: default_base(),
            order: default_order(),
            h: default_h(),
        }
    }
}

impl TryFrom<KernelParams> for KernelSpec {
    type Error = Error;
    fn try_from(p: KernelParams) -> Result<Self> {
        KernelSpec::new(p.base, p.order, p.h)
    }
}

impl From<KernelSpec> for KernelParams {
    fn from(k: KernelSpec) -> Self {
        Self {
            base: k.base,
            order: k.order,
            h: k.h,
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::new(BaseKernel::Gaussian, 2, default_h()).expect("default kernel")
    }
}

impl KernelSpec {
    pub fn new(base: BaseKernel, order: usize, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidBandwidth(h));
        }
        if order < 2 || !order.is_multiple_of(2) || order > 12 {
            return Err(Error::InvalidKernel(format!(
                "order must be an even integer in 2..=12, got {order}"
            )));
        }
        let m = order / 2;
        let hankel = DMatrix::from_fn(m, m, |r, c| base.even_moment(r + c));
        let mut rhs = DVector::zeros(m);
        rhs[0] = 1.0;
        let coef = hankel
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidKernel("moment system is singular".into()))?;
        let spec = Self {
            base,
            order,
            h,
            coef: coef.iter().copied().collect(),
        };
        let report = kernel_moment_check(&spec);
        if let Some(bad) = report
            .rows
            .iter()
            .find(|r| r.target.is_some() && r.deviation() > 1e-6)
        {
            return Err(Error::InvalidKernel(format!(
                "moment {} is {} (expected {})",
                bad.m,
                bad.value,
                bad.target.unwrap()
            )));
        }
        Ok(spec)
    }

    pub fn gaussian(h: f64) -> Result<Self> {
        Self::new(BaseKernel::Gaussian, 2, h)
    }

    pub fn with_bandwidth(&self, h: f64) -> Result<Self> {
        Self::new(self.base, self.order, h)
    }

    pub fn base(&self) -> BaseKernel {
        self.base
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Polynomial coefficients in `u²`, lowest degree first.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let k0 = self.base.eval(u);
        if self.coef.len() == 1 {
            return k0;
        }
        let u2 = u * u;
        let p = self.coef.iter().rev().fold(0.0, |acc, c| acc * u2 + c);
        p * k0
    }

    /// `K(u) = 0` exactly for `|u| > radius()`.
    pub fn radius(&self) -> f64 {
        self.base.radius()
    }
}

#[derive(Debug, Clone)]
pub struct MomentRow {
    pub m: usize,
    pub value: f64,
    /// `None` for the leading nonzero moment of order `order`.
    pub target: Option<f64>,
}

impl MomentRow {
    pub fn deviation(&self) -> f64 {
        self.target.map_or(0.0, |t| (self.value - t).abs())
    }
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(MomentRow::deviation)
            .fold(0.0, f64::max)
    }
}

/// Integrates `∫ u^m K(u) du` for `m = 0..=order` by composite Simpson.
pub fn kernel_moment_check(k: &KernelSpec) -> MomentReport {
    let (lo, hi) = match k.base {
        BaseKernel::Gaussian => (-14.0, 14.0),
        BaseKernel::Epanechnikov => (-1.0, 1.0),
    };
    let steps = 40_000usize;
    let dx = (hi - lo) / steps as f64;
    let rows = (0..=k.order)
        .map(|m| {
            let f = |u: f64| u.powi(m as i32) * k.eval(u);
            let mut s = f(lo) + f(hi);
            for t in 1..steps {
                let w = if t % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(lo + t as f64 * dx);
            }
            let value = s * dx / 3.0;
            let target = if m == 0 {
                Some(1.0)
            } else if m % 2 == 1 || m < k.order {
                Some(0.0)
            } else {
                None
            };
            MomentRow { m, value, target }
        })
        .collect();
    MomentReport { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensitySource {
    Known,
    Unconditional,
    Conditional,
}

/// Per-dyad density values, floored at `floor`.
#[derive(Debug, Clone)]
pub struct DensityField {
    n: usize,
    floor: f64,
    values: SymMatrix,
    floored: Vec<bool>,
    joint: Option<SymMatrix>,
    marginal: Option<SymMatrix>,
    source: DensitySource,
}

impl DensityField {
    /// Builds a field from raw values, flooring and flagging as needed.
    pub fn from_raw(n: usize, raw: &SymMatrix, floor: f64, source: DensitySource) -> Self {
        let mut values = SymMatrix::zeros(n);
        let mut floored = vec![false; n * n];
        for (i, j) in dyads(n) {
            let f = raw.get(i, j);
            if !(f >= floor) {
                values.set(i, j, floor);
                floored[i * n + j] = true;
                floored[j * n + i] = true;
            } else {
                values.set(i, j, f);
            }
        }
        Self {
            n,
            floor,
            values,
            floored,
            joint: None,
            marginal: None,
            source,
        }
    }

    /// Wraps values and flags as given, without enforcing the floor.
    pub fn from_parts_unchecked(values: SymMatrix, floored: Vec<bool>, floor: f64) -> Self {
        Self {
            n: values.n(),
            floor,
            values,
            floored,
            joint: None,
            marginal: None,
            source: DensitySource::Known,
        }
    }

    pub fn known(net: &NetworkData, dist: &Dist, floor: f64) -> Result<Self> {
        dist.validate()?;
        let n = net.n();
        let mut raw = SymMatrix::zeros(n);
        for (i, j) in dyads(n) {
            raw.set(i, j, dist.pdf(net.v(i, j))?);
        }
        Ok(Self::from_raw(n, &raw, floor, DensitySource::Known))
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    #[inline]
    pub fn is_floored(&self, i: usize, j: usize) -> bool {
        self.floored[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn source(&self) -> DensitySource {
        self.source
    }

    /// Joint estimate `f̂_vx` (conditional fits only).
    pub fn joint(&self) -> Option<&SymMatrix> {
        self.joint.as_ref()
    }

    /// Covariate density `f̂_x` (conditional fits only).
    pub fn marginal(&self) -> Option<&SymMatrix> {
        self.marginal.as_ref()
    }

    pub fn floor_fraction(&self) -> f64 {
        let m = dyads(self.n)
            .filter(|&(i, j)| self.is_floored(i, j))
            .count();
        m as f64 / crate::network::dyad_count(self.n).max(1) as f64
    }

    /// Diagnostic dump with columns `i,j,fhat,floored`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,fhat,floored\n");
        for (i, j) in dyads(self.n) {
            writeln!(
                s,
                "{},{},{},{}",
                i,
                j,
                self.value(i, j),
                self.is_floored(i, j) as u8
            )
            .unwrap();
        }
        s
    }
}

/// How the first-stage density is obtained.
#[derive(Debug, Clone)]
pub enum DensityPolicy {
    /// Analytic `f(v)`.
    Known(Dist),
    /// Dyadic KDE of `v`, optionally conditional on `(X_i, X_j)`.
    Kernel {
        kernel: KernelSpec,
        conditional: bool,
    },
}

impl DensityPolicy {
    pub fn fit(&self, net: &NetworkData, floor: f64) -> Result<DensityField> {
        self.fit_weighted(net, None, floor)
    }

    /// Fits under agent multiplicity weights (`None` means all ones).
    pub fn fit_weighted(
        &self,
        net: &NetworkData,
        weights: Option<&[f64]>,
        floor: f64,
    ) -> Result<DensityField> {
        match self {
            DensityPolicy::Known(d) => DensityField::known(net, d, floor),
            DensityPolicy::Kernel {
                kernel,
                conditional: false,
            } => fit_unconditional_weighted(net, kernel, weights, floor),
            DensityPolicy::Kernel {
                kernel,
                conditional: true,
            } => fit_conditional_weighted(net, kernel, weights, floor),
        }
    }
}

struct SortedDyads {
    v: Vec<f64>,
    a: Vec<u32>,
    b: Vec<u32>,
}

impl SortedDyads {
    fn new(net: &NetworkData) -> Self {
        let mut all: Vec<(f64, u32, u32)> = dyads(net.n())
            .map(|(i, j)| (net.v(i, j), i as u32, j as u32))
            .collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        Self {
            v: all.iter().map(|t| t.0).collect(),
            a: all.iter().map(|t| t.1).collect(),
            b: all.iter().map(|t| t.2).collect(),
        }
    }

    fn window(&self, centre: f64, half_width: f64) -> std::ops::Range<usize> {
        let lo = self.v.partition_point(|&x| x < centre - half_width);
        let hi = self.v.partition_point(|&x| x <= centre + half_width);
        lo..hi.max(lo)
    }
}

fn check_inputs(net: &NetworkData, weights: Option<&[f64]>) -> Result<()> {
    if net.n() < 4 {
        return Err(Error::InsufficientAgents(net.n()));
    }
    if let Some(w) = weights {
        if w.len() != net.n() || w.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidConfig(
                "agent weights must be n nonnegative values".into(),
            ));
        }
    }
    Ok(())
}

/// Per-target adjusted weight `c'_a = c_a − 1[a = i] − 1[a = j]`.
#[inline]
fn adjusted(c: Option<&[f64]>, a: usize, i: usize, j: usize) -> f64 {
    let base = c.map_or(1.0, |c| c[a]);
    let w = base - (a == i) as u8 as f64 - (a == j) as u8 as f64;
    w.max(0.0)
}

/// Number of ordered pairs with distinct agents left after removing one
/// copy each of `i` and `j`: `(Σc')² − Σc'²`.
fn pair_mass(c: Option<&[f64]>, n: usize, i: usize, j: usize) -> f64 {
    match c {
        None => ((n - 2) * (n - 3)) as f64,
        Some(c) => {
            let (mut s1, mut s2) = (0.0, 0.0);
            for a in 0..n {
                let w = adjusted(Some(c), a, i, j);
                s1 += w;
                s2 += w * w;
            }
            s1 * s1 - s2
        }
    }
}

/// `f̂_v(v_ij) = [(n−2)(n−3)h]⁻¹ Σ_{k1≠k2 ∉ {i,j}} K((v_{k1k2} − v_ij)/h)`.
pub fn fit_unconditional(net: &NetworkData, k: &KernelSpec, floor: f64) -> Result<DensityField> {
    fit_unconditional_weighted(net, k, None, floor)
}

pub fn fit_unconditional_weighted(
    net: &NetworkData,
    k: &KernelSpec,
    weights: Option<&[f64]>,
    floor: f64,
) -> Result<DensityField> {
    check_inputs(net, weights)?;
    let n = net.n();
    let h = k.h();
    let sorted = SortedDyads::new(net);
    let half = k.radius() * h;
    let targets: Vec<(usize, usize)> = dyads(n).collect();
    let vals: Vec<f64> = targets
        .par_iter()
        .map(|&(i, j)| {
            let v0 = net.v(i, j);
            let mut s = 0.0;
            for q in sorted.window(v0, half) {
                let (a, b) = (sorted.a[q] as usize, sorted.b[q] as usize);
                let w = adjusted(weights, a, i, j) * adjusted(weights, b, i, j);
                if w == 0.0 {
                    continue;
                }
                s += w * k.eval((sorted.v[q] - v0) / h);
            }
            let mass = pair_mass(weights, n, i, j);
            if mass > 0.0 {
                2.0 * s / (mass * h)
            } else {
                0.0
            }
        })
        .collect();
    let mut raw = SymMatrix::zeros(n);
    for (&(i, j), f) in targets.iter().zip(vals) {
        raw.set(i, j, f);
    }
    Ok(DensityField::from_raw(
        n,
        &raw,
        floor,
        DensitySource::Unconditional,
    ))
}

/// `f̂_{v|x} = f̂_vx / f̂_x` with product kernels over `(v, X_{k1}, X_{k2})`.
pub fn fit_conditional(net: &NetworkData, k: &KernelSpec, floor: f64) -> Result<DensityField> {
    fit_conditional_weighted(net, k, None, floor)
}

pub fn fit_conditional_weighted(
    net: &NetworkData,
    k: &KernelSpec,
    weights: Option<&[f64]>,
    floor: f64,
) -> Result<DensityField> {
    if net.k() == 0 {
        let mut f = fit_unconditional_weighted(net, k, weights, floor)?;
        f.source = DensitySource::Conditional;
        let n = net.n();
        f.joint = Some(f.values.clone());
        f.marginal = Some(SymMatrix::from_upper(n, |_, _| 1.0));
        return Ok(f);
    }
    check_inputs(net, weights)?;
    let n = net.n();
    let kd = net.k();
    let h = k.h();

    // kx[i * n + a] = Π_c K((X_ac − X_ic)/h)
    let kx: Vec<f64> = (0..n * n)
        .map(|p| {
            let (i, a) = (p / n, p % n);
            net.x(a)
                .iter()
                .zip(net.x(i))
                .map(|(xa, xi)| k.eval((xa - xi) / h))
                .product()
        })
        .collect();

    let sorted = SortedDyads::new(net);
    let half = k.radius() * h;
    let hx = h.powi(2 * kd as i32);
    let targets: Vec<(usize, usize)> = dyads(n).collect();
    let rows: Vec<(f64, f64)> = targets
        .par_iter()
        .map(|&(i, j)| {
            let ki = &kx[i * n..(i + 1) * n];
            let kj = &kx[j * n..(j + 1) * n];
            let v0 = net.v(i, j);
            let mut s = 0.0;
            for q in sorted.window(v0, half) {
                let (a, b) = (sorted.a[q] as usize, sorted.b[q] as usize);
                let w = adjusted(weights, a, i, j) * adjusted(weights, b, i, j);
                if w == 0.0 {
                    continue;
                }
                s += w * k.eval((sorted.v[q] - v0) / h) * (ki[a] * kj[b] + ki[b] * kj[a]);
            }
            let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
            for c in 0..n {
                let w = adjusted(weights, c, i, j);
                if w == 0.0 {
                    continue;
                }
                sa += w * ki[c];
                sb += w * kj[c];
                sab += w * w * ki[c] * kj[c];
            }
            let mass = pair_mass(weights, n, i, j);
            if mass > 0.0 {
                (s / (mass * hx * h), (sa * sb - sab) / (mass * hx))
            } else {
                (0.0, 0.0)
            }
        })
        .collect();

    let mut joint = SymMatrix::zeros(n);
    let mut marginal = SymMatrix::zeros(n);
    let mut values = SymMatrix::zeros(n);
    let mut floored = vec![false; n * n];
    for (&(i, j), &(fvx, fx)) in targets.iter().zip(&rows) {
        joint.set(i, j, fvx);
        marginal.set(i, j, fx);
        let mut flag = false;
        let denom = if fx >= floor {
            fx
        } else {
            flag = true;
            floor
        };
        let mut r = fvx / denom;
        if !(r >= floor) {
            r = floor;
            flag = true;
        }
        values.set(i, j, r);
        floored[i * n + j] = flag;
        floored[j * n + i] = flag;
    }
    Ok(DensityField {
        n,
        floor,
        values,
        floored,
        joint: Some(joint),
        marginal: Some(marginal),
        source: DensitySource::Conditional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_network, DgpConfig};
    use approx::assert_abs_diff_eq;

    fn naive_unconditional(net: &NetworkData, k: &KernelSpec, i: usize, j: usize) -> f64 {
        let n = net.n();
        let mut s = 0.0;
        for k1 in 0..n {
            for k2 in 0..n {
                if k1 == k2 || [i, j].contains(&k1) || [i, j].contains(&k2) {
                    continue;
                }
                s += k.eval((net.v(k1, k2) - net.v(i, j)) / k.h());
            }
        }
        s / (((n - 2) * (n - 3)) as f64 * k.h())
    }

    fn naive_conditional(net: &NetworkData, k: &KernelSpec, i: usize, j: usize) -> (f64, f64) {
        let n = net.n();
        let h = k.h();
        let kx = |a: usize, b: usize| -> f64 {
            net.x(a)
                .iter()
                .zip(net.x(b))
                .map(|(x, y)| k.eval((x - y) / h))
                .product()
        };
        let (mut svx, mut sx) = (0.0, 0.0);
        for k1 in 0..n {
            for k2 in 0..n {
                if k1 == k2 || [i, j].contains(&k1) || [i, j].contains(&k2) {
                    continue;
                }
                let x = kx(k1, i) * kx(k2, j);
                sx += x;
                svx += x * k.eval((net.v(k1, k2) - net.v(i, j)) / h);
            }
        }
        let m = ((n - 2) * (n - 3)) as f64;
        let l = h.powi(2 * net.k() as i32);
        (svx / (m * l * h), sx / (m * l))
    }

    fn small(n: usize, seed: u64) -> NetworkData {
        simulate_network(
            &DgpConfig {
                n,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_second_order_moments() {
        let r = kernel_moment_check(&KernelSpec::gaussian(1.0).unwrap());
        assert_abs_diff_eq!(r.rows[0].value, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.rows[1].value, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.rows[2].value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn fourth_order_gaussian() {
        let k = KernelSpec::new(BaseKernel::Gaussian, 4, 1.0).unwrap();
        assert_abs_diff_eq!(k.coefficients()[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(k.coefficients()[1], -0.5, epsilon = 1e-12);
        let r = kernel_moment_check(&k);
        assert!(r.rows[2].value.abs() < 1e-6);
        assert!(r.rows[4].target.is_none());
        assert_abs_diff_eq!(r.rows[4].value, -3.0, epsilon = 1e-6);
    }

    #[test]
    fn epanechnikov_second_moment() {
        let r = kernel_moment_check(&KernelSpec::new(BaseKernel::Epanechnikov, 2, 1.0).unwrap());
        assert_abs_diff_eq!(r.rows[0].value, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.rows[2].value, 0.2, epsilon = 1e-8);
    }

    #[test]
    fn higher_orders_pass_construction() {
        for base in [BaseKernel::Gaussian, BaseKernel::Epanechnikov] {
            for order in [2, 4, 6, 8] {
                let k = KernelSpec::new(base, order, 0.5).unwrap();
                assert!(
                    kernel_moment_check(&k).max_deviation() < 1e-6,
                    "{base:?} {order}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            KernelSpec::gaussian(0.0),
            Err(Error::InvalidBandwidth(_))
        ));
        assert!(matches!(
            KernelSpec::gaussian(-1.0),
            Err(Error::InvalidBandwidth(_))
        ));
        assert!(KernelSpec::new(BaseKernel::Gaussian, 3, 1.0).is_err());
    }

    #[test]
    fn constant_v_gives_peak_over_h() {
        let n = 4;
        let v = SymMatrix::from_upper(n, |_, _| 0.7);
        let net = NetworkData::new(n, 1, vec![0.0; n], v, vec![0; n * n]).unwrap();
        let k = KernelSpec::gaussian(0.3).unwrap();
        let f = fit_unconditional(&net, &k, 1e-4).unwrap();
        for (i, j) in dyads(n) {
            assert_abs_diff_eq!(f.value(i, j), k.eval(0.0) / 0.3, epsilon = 1e-14);
        }
    }

    #[test]
    fn unconditional_matches_double_loop() {
        let net = small(12, 4);
        for k in [
            KernelSpec::gaussian(0.4).unwrap(),
            KernelSpec::new(BaseKernel::Epanechnikov, 2, 1.5).unwrap(),
        ] {
            let f = fit_unconditional(&net, &k, 0.0).unwrap();
            for (i, j) in dyads(12) {
                let want = naive_unconditional(&net, &k, i, j);
                assert!(
                    (f.value(i, j) - want).abs() <= 1e-12 * want.abs().max(1e-300),
                    "{i} {j}"
                );
            }
        }
    }

    #[test]
    fn leave_two_out_ignores_own_rows() {
        let net = small(10, 8);
        let k = KernelSpec::gaussian(0.5).unwrap();
        let base = fit_unconditional(&net, &k, 0.0).unwrap();
        // perturb every dyad touching agents 0 or 1, except (0,1) itself
        let mut v = net.v_matrix().clone();
        for a in 2..10 {
            v.set(0, a, v.get(0, a) + 3.0);
            v.set(1, a, v.get(1, a) - 2.0);
        }
        let d: Vec<u8> = (0..100).map(|p| net.d(p / 10, p % 10)).collect();
        let moved = NetworkData::new(10, 1, (0..10).map(|i| net.x(i)[0]).collect(), v, d).unwrap();
        let f = fit_unconditional(&moved, &k, 0.0).unwrap();
        assert_abs_diff_eq!(f.value(0, 1), base.value(0, 1), epsilon = 1e-14);
        assert!((f.value(2, 3) - base.value(2, 3)).abs() > 1e-8);
    }

    #[test]
    fn conditional_matches_double_loop() {
        let net = small(6, 17);
        let k = KernelSpec::gaussian(0.8).unwrap();
        let f = fit_conditional(&net, &k, 0.0).unwrap();
        for (i, j) in dyads(6) {
            let (jt, mg) = naive_conditional(&net, &k, i, j);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(f.joint().unwrap().get(i, j), jt) < 1e-12);
            assert!(rel(f.marginal().unwrap().get(i, j), mg) < 1e-12);
            assert!(rel(f.value(i, j), jt / mg) < 1e-12);
        }
    }

    #[test]
    fn conditional_two_covariates_matches_double_loop() {
        let cfg = DgpConfig {
            n: 7,
            theta0: vec![1.0, -0.5],
            ..Default::default()
        };
        let net = simulate_network(&cfg, 2).unwrap();
        let k = KernelSpec::gaussian(0.9).unwrap();
        let f = fit_conditional(&net, &k, 0.0).unwrap();
        for (i, j) in dyads(7) {
            let (jt, mg) = naive_conditional(&net, &k, i, j);
            assert!((f.value(i, j) - jt / mg).abs() < 1e-12 * (jt / mg).abs());
        }
    }

    #[test]
    fn degenerate_covariates_reduce_to_unconditional() {
        let base = small(15, 3);
        let d: Vec<u8> = (0..225).map(|p| base.d(p / 15, p % 15)).collect();
        let net = NetworkData::new(15, 1, vec![0.1; 15], base.v_matrix().clone(), d).unwrap();
        let k = KernelSpec::gaussian(0.3).unwrap();
        let c = fit_conditional(&net, &k, 0.0).unwrap();
        let u = fit_unconditional(&net, &k, 0.0).unwrap();
        for (i, j) in dyads(15) {
            assert!((c.value(i, j) - u.value(i, j)).abs() <= 1e-12 * u.value(i, j));
        }
    }

    #[test]
    fn no_covariates_is_exactly_unconditional() {
        let base = small(12, 5);
        let d: Vec<u8> = (0..144).map(|p| base.d(p / 12, p % 12)).collect();
        let net = NetworkData::new(12, 0, vec![], base.v_matrix().clone(), d).unwrap();
        let k = KernelSpec::gaussian(0.2).unwrap();
        let c = fit_conditional(&net, &k, 1e-4).unwrap();
        let u = fit_unconditional(&net, &k, 1e-4).unwrap();
        for (i, j) in dyads(12) {
            assert_eq!(c.value(i, j).to_bits(), u.value(i, j).to_bits());
        }
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let net = small(9, 21);
        let k = KernelSpec::gaussian(0.6).unwrap();
        let ones = vec![1.0; 9];
        for cond in [false, true] {
            let p = DensityPolicy::Kernel {
                kernel: k.clone(),
                conditional: cond,
            };
            let a = p.fit(&net, 1e-4).unwrap();
            let b = p.fit_weighted(&net, Some(&ones), 1e-4).unwrap();
            for (i, j) in dyads(9) {
                assert_eq!(a.value(i, j).to_bits(), b.value(i, j).to_bits());
            }
        }
    }

    #[test]
    fn floor_is_applied_and_flagged() {
        let n = 6;
        let mut v = SymMatrix::zeros(n);
        v.set(0, 1, 50.0);
        let net = NetworkData::new(n, 1, vec![0.0; n], v, vec![0; n * n]).unwrap();
        let f = fit_unconditional(&net, &KernelSpec::gaussian(0.1).unwrap(), 1e-4).unwrap();
        assert!(f.is_floored(0, 1));
        assert_eq!(f.value(0, 1), 1e-4);
        assert!(!f.is_floored(2, 3));
        assert!(f.to_csv().starts_with("i,j,fhat,floored\n0,1,0.0001,1\n"));
    }

    #[test]
    fn bandwidth_sweep_stays_finite() {
        let net = small(30, 1);
        for h in [1e-4, 1e-3, 0.025, 0.3, 1.0, 10.0] {
            let k = KernelSpec::gaussian(h).unwrap();
            for f in [
                fit_unconditional(&net, &k, 1e-4).unwrap(),
                fit_conditional(&net, &k, 1e-4).unwrap(),
            ] {
                assert!(dyads(30).all(|(i, j)| f.value(i, j).is_finite() && f.value(i, j) >= 1e-4));
            }
        }
    }
}
