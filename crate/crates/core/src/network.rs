//! Undirected, unweighted networks with agent attributes and dyad covariates.
//!
//! Dyad-level quantities (`v`, `D`, latent `U`) are stored as dense symmetric
//! `n × n` matrices; diagonals are unused and held at zero.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense symmetric matrix with an unused (zero) diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from an upper-triangle fill function `f(i, j)` for `i < j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Values for `i < j` in row-major upper-triangle order.
    pub fn upper(&self) -> Vec<f64> {
        dyads(self.n).map(|(i, j)| self.get(i, j)).collect()
    }
}

/// Iterator over unordered dyads `(i, j)`, `i < j`, in row-major order.
pub fn dyads(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

pub fn dyad_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Latent fields available only for simulated networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    /// Agent heterogeneity `A_i`.
    pub a: Vec<f64>,
    /// Link shocks `U_ij`.
    pub u: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    n: usize,
    k: usize,
    x: Vec<f64>,
    v: SymMatrix,
    d: Vec<u8>,
    latent: Option<Latent>,
}

impl NetworkData {
    /// Validates and assembles a network.
    ///
    /// `x` holds `n` attribute rows of width `k`, `d` is a dense `n × n`
    /// adjacency with entries in `{0, 1}`.
    pub fn new(n: usize, k: usize, x: Vec<f64>, v: SymMatrix, d: Vec<u8>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no agents".into()));
        }
        if x.len() != n * k {
            return Err(Error::InvalidNetwork(format!(
                "attribute table has {} entries, expected n*K = {}",
                x.len(),
                n * k
            )));
        }
        if v.n() != n || d.len() != n * n {
            return Err(Error::InvalidNetwork("dyad matrices do not match n".into()));
        }
        if let Some(pos) = x.iter().position(|z| !z.is_finite()) {
            return Err(Error::InvalidNetwork(format!(
                "attribute of agent {} is not finite",
                pos / k.max(1)
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0 {
                return Err(Error::InvalidNetwork(format!("self-link at agent {i}")));
            }
            for j in (i + 1)..n {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if a != b || a > 1 {
                    return Err(Error::InvalidNetwork(format!(
                        "adjacency not symmetric binary at ({i}, {j})"
                    )));
                }
                if !v.get(i, j).is_finite() {
                    return Err(Error::InvalidNetwork(format!("v[{i}][{j}] is not finite")));
                }
                if (v.get(i, j) - v.get(j, i)).abs() > 0.0 {
                    return Err(Error::InvalidNetwork(format!(
                        "v not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            k,
            x,
            v,
            d,
            latent: None,
        })
    }

    pub fn with_latent(mut self, latent: Latent) -> Result<Self> {
        if latent.a.len() != self.n || latent.u.n() != self.n {
            return Err(Error::InvalidNetwork("latent fields do not match n".into()));
        }
        self.latent = Some(latent);
        Ok(self)
    }

    pub fn without_latent(&self) -> Self {
        Self {
            latent: None,
            ..self.clone()
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Attribute dimension `K`.
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn v(&self, i: usize, j: usize) -> f64 {
        self.v.get(i, j)
    }

    pub fn v_matrix(&self) -> &SymMatrix {
        &self.v
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> u8 {
        self.d[i * self.n + j]
    }

    pub fn latent(&self) -> Option<&Latent> {
        self.latent.as_ref()
    }

    pub fn link_count(&self) -> usize {
        dyads(self.n).filter(|&(i, j)| self.d(i, j) == 1).count()
    }

    /// Fraction of realized links among the `n(n−1)/2` possible ones.
    pub fn average_degree(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.link_count() as f64 / dyad_count(self.n) as f64
    }

    /// Mean of the full adjacency matrix, zero diagonal included: `ΣD / n²`.
    pub fn adjacency_mean(&self) -> f64 {
        2.0 * self.link_count() as f64 / (self.n * self.n) as f64
    }

    pub fn pair_covariates(&self, g: &PairCombiner) -> PairMatrix {
        PairMatrix::build(self, g)
    }

    /// Writes the plain-text format: header `n K`, `n` attribute lines
    /// `i x_1 … x_K`, then one `i j v_ij d_ij` line per dyad `i < j`. When
    /// latent fields are present a `latent` line follows, then `i A_i` lines
    /// and `i j U_ij` lines in the same orders. Indices are zero-based.
    /// Floats use shortest round-trip formatting.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        writeln!(out, "{} {}", self.n, self.k)?;
        for i in 0..self.n {
            line.clear();
            write!(line, "{i}").unwrap();
            for z in self.x(i) {
                write!(line, " {z}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        for (i, j) in dyads(self.n) {
            writeln!(out, "{} {} {} {}", i, j, self.v(i, j), self.d(i, j))?;
        }
        if let Some(lat) = &self.latent {
            writeln!(out, "latent")?;
            for (i, a) in lat.a.iter().enumerate() {
                writeln!(out, "{i} {a}")?;
            }
            for (i, j) in dyads(self.n) {
                writeln!(out, "{} {} {}", i, j, lat.u.get(i, j))?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(no, l)| l.map(|s| (no + 1, s)))
            .filter(|r| r.as_ref().map_or(true, |(_, s)| !s.trim().is_empty()));

        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some(r) => Ok(r?),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };

        let (no, header) = next("header `n K`")?;
        let head = parse_fields::<usize>(&header, no)?;
        if head.len() != 2 {
            return Err(Error::Parse {
                line: no,
                msg: "header must be `n K`".into(),
            });
        }
        let (n, k) = (head[0], head[1]);

        let mut x = vec![0.0; n * k];
        let mut seen = vec![false; n];
        for _ in 0..n {
            let (no, line) = next("attribute line")?;
            let mut it = line.split_whitespace();
            let i: usize = parse_token(it.next(), no, "agent index")?;
            if i >= n || seen[i] {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("bad or repeated agent index {i}"),
                });
            }
            seen[i] = true;
            for c in 0..k {
                x[i * k + c] = parse_token(it.next(), no, "attribute")?;
            }
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("expected {k} attributes"),
                });
            }
        }

        let mut v = SymMatrix::zeros(n);
        let mut d = vec![0u8; n * n];
        let mut filled = vec![false; n * n];
        for _ in 0..dyad_count(n) {
            let (no, line) = next("dyad line")?;
            let mut it = line.split_whitespace();
            let i: usize = parse_token(it.next(), no, "i")?;
            let j: usize = parse_token(it.next(), no, "j")?;
            let vij: f64 = parse_token(it.next(), no, "v_ij")?;
            let dij: u8 = parse_token(it.next(), no, "d_ij")?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: no,
                    msg: "trailing fields on dyad line".into(),
                });
            }
            if i == j || i >= n || j >= n || dij > 1 {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("invalid dyad ({i}, {j}, d = {dij})"),
                });
            }
            let (a, b) = (i.min(j), i.max(j));
            if filled[a * n + b] {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("dyad ({a}, {b}) listed twice"),
                });
            }
            filled[a * n + b] = true;
            v.set(a, b, vij);
            d[a * n + b] = dij;
            d[b * n + a] = dij;
        }
        let net = NetworkData::new(n, k, x, v, d)?;
        match next("") {
            Err(Error::Parse { line: 0, .. }) => Ok(net),
            Err(e) => Err(e),
            Ok((no, line)) => {
                if line.trim() != "latent" {
                    return Err(Error::Parse {
                        line: no,
                        msg: "trailing content after dyad table".into(),
                    });
                }
                let mut a = vec![0.0; n];
                for (i, slot) in a.iter_mut().enumerate() {
                    let (no, line) = next("latent heterogeneity line")?;
                    let mut it = line.split_whitespace();
                    let idx: usize = parse_token(it.next(), no, "agent index")?;
                    if idx != i {
                        return Err(Error::Parse {
                            line: no,
                            msg: format!("expected agent {i}, found {idx}"),
                        });
                    }
                    *slot = parse_token(it.next(), no, "A_i")?;
                }
                let mut u = SymMatrix::zeros(n);
                for (i, j) in dyads(n) {
                    let (no, line) = next("latent shock line")?;
                    let f = parse_fields::<f64>(&line, no)?;
                    if f.len() != 3 || f[0] != i as f64 || f[1] != j as f64 {
                        return Err(Error::Parse {
                            line: no,
                            msg: format!("expected `{i} {j} u_ij`"),
                        });
                    }
                    u.set(i, j, f[2]);
                }
                if let Ok((no, _)) = next("") {
                    return Err(Error::Parse {
                        line: no,
                        msg: "trailing content after latent section".into(),
                    });
                }
                net.with_latent(Latent { a, u })
            }
        }
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, no: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: no,
                msg: format!("cannot parse `{t}`"),
            })
        })
        .collect()
}

fn parse_token<T: std::str::FromStr>(tok: Option<&str>, no: usize, what: &str) -> Result<T> {
    let t = tok.ok_or_else(|| Error::Parse {
        line: no,
        msg: format!("missing {what}"),
    })?;
    t.parse().map_err(|_| Error::Parse {
        line: no,
        msg: format!("cannot parse {what} from `{t}`"),
    })
}

type CombineFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// User-supplied combiner. The function must be symmetric in its two
/// arguments and write `out_dim` finite values.
#[derive(Clone)]
pub struct CustomCombiner {
    pub name: String,
    pub out_dim: usize,
    pub f: Arc<CombineFn>,
}

impl std::fmt::Debug for CustomCombiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CustomCombiner({}, dim {})", self.name, self.out_dim)
    }
}

/// Maps an attribute pair `(X_i, X_j)` to the dyad covariate `W_ij`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCombiner {
    /// Elementwise product `X_i ∘ X_j`.
    #[default]
    Product,
    /// Elementwise `|X_i − X_j|`.
    AbsDifference,
    /// Elementwise `1[X_i = X_j]`.
    EqualityIndicator,
    #[serde(skip)]
    Custom(CustomCombiner),
}

impl PairCombiner {
    pub fn out_dim(&self, k: usize) -> usize {
        match self {
            PairCombiner::Custom(c) => c.out_dim,
            _ => k,
        }
    }

    pub fn combine(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            PairCombiner::Product => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = a * b;
                }
            }
            PairCombiner::AbsDifference => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = (a - b).abs();
                }
            }
            PairCombiner::EqualityIndicator => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = if a == b { 1.0 } else { 0.0 };
                }
            }
            PairCombiner::Custom(c) => (c.f)(x, y, out),
        }
    }
}

/// Dyad covariates `W_ij ∈ ℝᴷ` for all ordered pairs, dense `n × n × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn build(net: &NetworkData, g: &PairCombiner) -> Self {
        let n = net.n();
        let k = g.out_dim(net.k());
        let mut data = vec![0.0; n * n * k];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let off = (i * n + j) * k;
                    g.combine(net.x(i), net.x(j), &mut data[off..off + k]);
                }
            }
        }
        Self { n, k, data }
    }

    pub fn from_fn(n: usize, k: usize, mut f: impl FnMut(usize, usize, &mut [f64])) -> Self {
        let mut data = vec![0.0; n * n * k];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let off = (i * n + j) * k;
                    f(i, j, &mut data[off..off + k]);
                }
            }
        }
        Self { n, k, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.n + j) * self.k;
        &self.data[off..off + self.k]
    }

    /// Adds `shift` to every off-diagonal `W_ij`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    let off = (i * self.n + j) * self.k;
                    for (w, s) in out.data[off..off + self.k].iter_mut().zip(shift) {
                        *w += s;
                    }
                }
            }
        }
        out
    }

    /// Dyad average of `W_ij` over `i < j`.
    pub fn dyad_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.k];
        for (i, j) in dyads(self.n) {
            for (a, w) in acc.iter_mut().zip(self.get(i, j)) {
                *a += w;
            }
        }
        let m = dyad_count(self.n).max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

/// Number of ordered tetrads with distinct indices, `4!·C(n,4)`.
pub fn tetrad_count(n: usize) -> Result<u64> {
    if n < 4 {
        return Err(Error::InsufficientAgents(n));
    }
    let n = n as u64;
    Ok(n * (n - 1) * (n - 2) * (n - 3))
}

/// Ordered tetrad `(i1, i2, j1, j2)` of distinct agents.
///
/// The canonical enumeration is lexicographic in `(i1, j1, i2, j2)`, the
/// nesting order of the tetrad sums; `rank` and `unrank` are its bijection
/// onto `0..tetrad_count(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TetradIndex {
    pub i1: usize,
    pub i2: usize,
    pub j1: usize,
    pub j2: usize,
}

impl TetradIndex {
    pub fn new(i1: usize, i2: usize, j1: usize, j2: usize) -> Self {
        Self { i1, i2, j1, j2 }
    }

    pub fn is_valid(&self, n: usize) -> bool {
        let t = [self.i1, self.i2, self.j1, self.j2];
        t.iter().all(|&a| a < n) && (0..4).all(|p| ((p + 1)..4).all(|q| t[p] != t[q]))
    }

    pub fn rank(&self, n: usize) -> u64 {
        let order = [self.i1, self.j1, self.i2, self.j2];
        let mut used: Vec<usize> = Vec::with_capacity(4);
        let mut r = 0u64;
        for (pos, &a) in order.iter().enumerate() {
            let digit = a - used.iter().filter(|&&u| u < a).count();
            r = r * (n - pos) as u64 + digit as u64;
            used.push(a);
        }
        r
    }

    pub fn unrank(n: usize, mut sigma: u64) -> Self {
        let mut digits = [0usize; 4];
        for pos in (0..4).rev() {
            let radix = (n - pos) as u64;
            digits[pos] = (sigma % radix) as usize;
            sigma /= radix;
        }
        let mut used: Vec<usize> = Vec::with_capacity(4);
        let mut out = [0usize; 4];
        for pos in 0..4 {
            let mut a = 0;
            let mut skip = digits[pos];
            loop {
                if !used.contains(&a) {
                    if skip == 0 {
                        break;
                    }
                    skip -= 1;
                }
                a += 1;
            }
            used.push(a);
            out[pos] = a;
        }
        Self {
            i1: out[0],
            j1: out[1],
            i2: out[2],
            j2: out[3],
        }
    }
}

/// All ordered tetrads in canonical order.
pub fn tetrads(n: usize) -> impl Iterator<Item = TetradIndex> {
    (0..n).flat_map(move |i1| {
        (0..n).filter(move |&j1| j1 != i1).flat_map(move |j1| {
            (0..n)
                .filter(move |&i2| i2 != i1 && i2 != j1)
                .flat_map(move |i2| {
                    (0..n)
                        .filter(move |&j2| j2 != i1 && j2 != j1 && j2 != i2)
                        .map(move |j2| TetradIndex { i1, i2, j1, j2 })
                })
        })
    })
}

/// Within-tetrad double differences `(W̃, ṽ, D̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TetradDiff {
    pub w: Vec<f64>,
    pub v: f64,
    pub d: i8,
}

pub fn pairwise_differences(net: &NetworkData, w: &PairMatrix, t: TetradIndex) -> TetradDiff {
    debug_assert!(t.is_valid(net.n()));
    let TetradIndex { i1, i2, j1, j2 } = t;
    let wt = (0..w.k())
        .map(|c| (w.get(i1, j1)[c] - w.get(i1, j2)[c]) - (w.get(i2, j1)[c] - w.get(i2, j2)[c]))
        .collect();
    let vt = (net.v(i1, j1) - net.v(i1, j2)) - (net.v(i2, j1) - net.v(i2, j2));
    let dt =
        (net.d(i1, j1) as i8 - net.d(i1, j2) as i8) - (net.d(i2, j1) as i8 - net.d(i2, j2) as i8);
    TetradDiff {
        w: wt,
        v: vt,
        d: dt,
    }
}
