//! Univariate distribution specs used by the simulator and the known-density
//! estimator mode.
//!
//! Specs deserialize from tagged records such as
//! `{"dist": "beta", "a": 2, "b": 2, "shift": -0.5}`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::SimRng;

type SampleFn = dyn Fn(&mut SimRng) -> f64 + Send + Sync;
type RealFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user-supplied distribution. Only sampling is required; `cdf`, `pdf` and
/// `mean` enable the oracle variance, the known-density mode and the
/// analytic heterogeneity mean respectively.
#[derive(Clone)]
pub struct CustomDist {
    pub name: String,
    pub sample: Arc<SampleFn>,
    pub cdf: Option<Arc<RealFn>>,
    pub pdf: Option<Arc<RealFn>>,
    pub mean: Option<f64>,
}

impl fmt::Debug for CustomDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomDist({})", self.name)
    }
}

fn zero() -> f64 {
    0.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    /// `shift + scale · Beta(a, b)`.
    Beta {
        a: f64,
        b: f64,
        #[serde(default = "zero")]
        shift: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Normal with either `var` or `sd` given (exactly one).
    Normal {
        #[serde(default = "zero")]
        mean: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        var: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sd: Option<f64>,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Logistic {
        #[serde(default = "zero")]
        loc: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Point mass, mainly for degenerate test designs.
    Constant {
        value: f64,
    },
    #[serde(skip)]
    Custom(CustomDist),
}

impl Dist {
    pub fn beta(a: f64, b: f64, shift: f64) -> Self {
        Dist::Beta {
            a,
            b,
            shift,
            scale: 1.0,
        }
    }

    pub fn normal_var(mean: f64, var: f64) -> Self {
        Dist::Normal {
            mean,
            var: Some(var),
            sd: None,
        }
    }

    pub fn normal_sd(mean: f64, sd: f64) -> Self {
        Dist::Normal {
            mean,
            var: None,
            sd: Some(sd),
        }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Dist::Uniform { low, high }
    }

    pub fn name(&self) -> String {
        match self {
            Dist::Beta { a, b, shift, scale } => format!("{shift}+{scale}*beta({a},{b})"),
            Dist::Normal { mean, .. } => format!(
                "normal({mean},{})",
                self.normal_spread().map_or(f64::NAN, |s| s * s)
            ),
            Dist::Uniform { low, high } => format!("uniform({low},{high})"),
            Dist::Logistic { loc, scale } => format!("logistic({loc},{scale})"),
            Dist::Constant { value } => format!("constant({value})"),
            Dist::Custom(c) => c.name.clone(),
        }
    }

    fn normal_spread(&self) -> Result<f64> {
        match self {
            Dist::Normal { var, sd, .. } => match (var, sd) {
                (Some(v), None) if *v > 0.0 && v.is_finite() => Ok(v.sqrt()),
                (None, Some(s)) if *s > 0.0 && s.is_finite() => Ok(*s),
                (Some(_), Some(_)) => Err(Error::InvalidDistribution(
                    "normal: give either `var` or `sd`, not both".into(),
                )),
                (None, None) => Err(Error::InvalidDistribution(
                    "normal: one of `var` or `sd` is required".into(),
                )),
                _ => Err(Error::InvalidDistribution(
                    "normal: spread must be positive and finite".into(),
                )),
            },
            _ => unreachable!("normal_spread on non-normal spec"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        match *self {
            Dist::Beta { a, b, shift, scale } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return bad(format!(
                        "beta shape parameters must be positive, got ({a}, {b})"
                    ));
                }
                if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
                    return bad("beta: scale must be positive and shift finite".into());
                }
                Ok(())
            }
            Dist::Normal { mean, .. } => {
                if !mean.is_finite() {
                    return bad("normal: mean must be finite".into());
                }
                self.normal_spread().map(|_| ())
            }
            Dist::Uniform { low, high } => {
                if low.is_finite() && high.is_finite() && low < high {
                    Ok(())
                } else {
                    bad(format!("uniform requires low < high, got ({low}, {high})"))
                }
            }
            Dist::Logistic { loc, scale } => {
                if loc.is_finite() && scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    bad("logistic: scale must be positive".into())
                }
            }
            Dist::Constant { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    bad("constant must be finite".into())
                }
            }
            Dist::Custom(_) => Ok(()),
        }
    }

    /// Prepares a sampler; validates parameters once.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Dist::Beta { a, b, shift, scale } => Sampler::Beta {
                inner: rand_distr::Beta::new(a, b)
                    .map_err(|e| Error::InvalidDistribution(format!("beta({a}, {b}): {e}")))?,
                shift,
                scale,
            },
            Dist::Normal { mean, .. } => Sampler::Normal(
                rand_distr::Normal::new(mean, self.normal_spread()?)
                    .map_err(|e| Error::InvalidDistribution(e.to_string()))?,
            ),
            Dist::Uniform { low, high } => Sampler::Uniform(low, high),
            Dist::Logistic { loc, scale } => Sampler::Logistic(loc, scale),
            Dist::Constant { value } => Sampler::Constant(value),
            Dist::Custom(ref c) => Sampler::Custom(c.sample.clone()),
        })
    }

    pub fn mean(&self) -> Result<f64> {
        self.validate()?;
        match *self {
            Dist::Beta { a, b, shift, scale } => Ok(shift + scale * a / (a + b)),
            Dist::Normal { mean, .. } => Ok(mean),
            Dist::Uniform { low, high } => Ok(0.5 * (low + high)),
            Dist::Logistic { loc, .. } => Ok(loc),
            Dist::Constant { value } => Ok(value),
            Dist::Custom(ref c) => c.mean.ok_or_else(|| Error::NoAnalyticMean(c.name.clone())),
        }
    }

    pub fn variance(&self) -> Result<f64> {
        self.validate()?;
        match *self {
            Dist::Beta { a, b, scale, .. } => {
                Ok(scale * scale * a * b / ((a + b).powi(2) * (a + b + 1.0)))
            }
            Dist::Normal { .. } => self.normal_spread().map(|s| s * s),
            Dist::Uniform { low, high } => Ok((high - low).powi(2) / 12.0),
            Dist::Logistic { scale, .. } => Ok((scale * std::f64::consts::PI).powi(2) / 3.0),
            Dist::Constant { .. } => Ok(0.0),
            Dist::Custom(ref c) => Err(Error::NoAnalyticMean(c.name.clone())),
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        match *self {
            Dist::Beta { a, b, shift, scale } => {
                let z = (x - shift) / scale;
                if z <= 0.0 {
                    Ok(0.0)
                } else if z >= 1.0 {
                    Ok(1.0)
                } else {
                    Ok(statrs_beta(a, b)?.cdf(z))
                }
            }
            Dist::Normal { mean, .. } => Ok(statrs_normal(mean, self.normal_spread()?)?.cdf(x)),
            Dist::Uniform { low, high } => Ok(((x - low) / (high - low)).clamp(0.0, 1.0)),
            Dist::Logistic { loc, scale } => Ok(1.0 / (1.0 + (-(x - loc) / scale).exp())),
            Dist::Constant { value } => Ok(if x >= value { 1.0 } else { 0.0 }),
            Dist::Custom(ref c) => c
                .cdf
                .as_ref()
                .map(|f| f(x))
                .ok_or_else(|| Error::InvalidDistribution(format!("{} has no CDF", c.name))),
        }
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        match *self {
            Dist::Beta { a, b, shift, scale } => {
                let z = (x - shift) / scale;
                if z <= 0.0 || z >= 1.0 {
                    Ok(0.0)
                } else {
                    Ok(statrs_beta(a, b)?.pdf(z) / scale)
                }
            }
            Dist::Normal { mean, .. } => Ok(statrs_normal(mean, self.normal_spread()?)?.pdf(x)),
            Dist::Uniform { low, high } => Ok(if (low..=high).contains(&x) {
                1.0 / (high - low)
            } else {
                0.0
            }),
            Dist::Logistic { loc, scale } => {
                let e = (-(x - loc).abs() / scale).exp();
                Ok(e / (scale * (1.0 + e).powi(2)))
            }
            Dist::Constant { .. } => Err(Error::InvalidDistribution(
                "point mass has no density".into(),
            )),
            Dist::Custom(ref c) => c
                .pdf
                .as_ref()
                .map(|f| f(x))
                .ok_or_else(|| Error::InvalidDistribution(format!("{} has no density", c.name))),
        }
    }

    /// Parses the compact density grammar `normal(mu,var)` / `uniform(a,b)`.
    pub fn parse_compact(spec: &str) -> Result<Self> {
        let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        let err = || {
            Error::InvalidDistribution(format!(
                "cannot parse `{spec}`; expected normal(mu,var) or uniform(a,b)"
            ))
        };
        let open = s.find('(').ok_or_else(err)?;
        if !s.ends_with(')') {
            return Err(err());
        }
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|t| t.parse::<f64>().map_err(|_| err()))
            .collect::<Result<_>>()?;
        if args.len() != 2 {
            return Err(err());
        }
        let d = match &s[..open] {
            "normal" => Dist::normal_var(args[0], args[1]),
            "uniform" => Dist::uniform(args[0], args[1]),
            _ => return Err(err()),
        };
        d.validate()?;
        Ok(d)
    }
}

fn statrs_beta(a: f64, b: f64) -> Result<statrs::distribution::Beta> {
    statrs::distribution::Beta::new(a, b).map_err(|e| Error::InvalidDistribution(e.to_string()))
}

fn statrs_normal(mean: f64, sd: f64) -> Result<statrs::distribution::Normal> {
    statrs::distribution::Normal::new(mean, sd)
        .map_err(|e| Error::InvalidDistribution(e.to_string()))
}

/// A validated, ready-to-draw distribution.
#[derive(Clone)]
pub enum Sampler {
    Beta {
        inner: rand_distr::Beta<f64>,
        shift: f64,
        scale: f64,
    },
    Normal(rand_distr::Normal<f64>),
    Uniform(f64, f64),
    Logistic(f64, f64),
    Constant(f64),
    Custom(Arc<SampleFn>),
}

impl Sampler {
    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match self {
            Sampler::Beta {
                inner,
                shift,
                scale,
            } => shift + scale * inner.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(lo, hi) => lo + (hi - lo) * rng.random::<f64>(),
            Sampler::Logistic(loc, s) => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                loc + s * (u / (1.0 - u)).ln()
            }
            Sampler::Constant(c) => *c,
            Sampler::Custom(f) => f(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments_match_closed_forms() {
        let x = Dist::beta(2.0, 2.0, -0.5);
        assert_abs_diff_eq!(x.mean().unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x.variance().unwrap(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(
            Dist::beta(0.5, 0.5, 0.0).mean().unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            Dist::normal_var(0.0, 2.0).variance().unwrap(),
            2.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            Dist::normal_sd(0.0, 2.0).variance().unwrap(),
            4.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn shifted_beta_cdf_is_smoothstep() {
        let u = Dist::beta(2.0, 2.0, -0.5);
        for t in [-0.7, -0.5, -0.2, 0.0, 0.13, 0.5, 0.9] {
            let s = (t + 0.5_f64).clamp(0.0, 1.0);
            assert_abs_diff_eq!(
                u.cdf(t).unwrap(),
                3.0 * s * s - 2.0 * s * s * s,
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(u.pdf(0.0).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn normal_pdf_at_zero() {
        let f = Dist::normal_var(0.0, 2.0).pdf(0.0).unwrap();
        assert_abs_diff_eq!(
            f,
            1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn arcsine_draws_are_finite_and_in_range() {
        let s = Dist::beta(0.5, 0.5, 0.0).sampler().unwrap();
        let mut rng = rng_from_seed(1);
        let mut acc = 0.0;
        let m = 200_000;
        for _ in 0..m {
            let b = s.sample(&mut rng);
            assert!(b.is_finite() && (0.0..=1.0).contains(&b));
            acc += b;
        }
        // var = 1/8
        assert!((acc / m as f64 - 0.5).abs() < 4.0 * (0.125 / m as f64).sqrt());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Dist::beta(-1.0, 2.0, 0.0).validate().is_err());
        assert!(Dist::uniform(1.0, 1.0).validate().is_err());
        assert!(Dist::Normal {
            mean: 0.0,
            var: Some(1.0),
            sd: Some(1.0)
        }
        .validate()
        .is_err());
        assert!(Dist::Normal {
            mean: 0.0,
            var: None,
            sd: None
        }
        .validate()
        .is_err());
        assert!(Dist::normal_var(0.0, -2.0).sampler().is_err());
    }

    #[test]
    fn compact_grammar() {
        match Dist::parse_compact("normal(0, 4)").unwrap() {
            Dist::Normal { mean, var, .. } => assert_eq!((mean, var), (0.0, Some(4.0))),
            d => panic!("{d:?}"),
        }
        assert!(matches!(
            Dist::parse_compact("uniform(-1,1)").unwrap(),
            Dist::Uniform { .. }
        ));
        for bad in [
            "normal(0)",
            "gamma(1,2)",
            "normal(0,2",
            "uniform(1,0)",
            "normal(a,b)",
        ] {
            assert!(Dist::parse_compact(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn serde_tagged_records() {
        let d: Dist = serde_json::from_str(r#"{"dist":"beta","a":2,"b":2,"shift":-0.5}"#).unwrap();
        assert_abs_diff_eq!(d.mean().unwrap(), 0.0, epsilon = 1e-15);
        let n: Dist = serde_json::from_str(r#"{"dist":"normal","sd":2}"#).unwrap();
        assert_abs_diff_eq!(n.variance().unwrap(), 4.0, epsilon = 1e-15);
        assert!(serde_json::from_str::<Dist>(r#"{"dist":"beta","a":2,"b":2,"shfit":1}"#).is_err());
        let back: Dist = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back.name(), d.name());
    }

    #[test]
    fn custom_without_mean_reports_it() {
        let c = Dist::Custom(CustomDist {
            name: "mine".into(),
            sample: Arc::new(|r: &mut SimRng| r.random::<f64>()),
            cdf: None,
            pdf: None,
            mean: None,
        });
        assert!(matches!(c.mean(), Err(Error::NoAnalyticMean(_))));
    }
}
