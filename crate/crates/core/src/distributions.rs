//! Test populations with exact quantile, CDF and density oracles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatrsNormal};

use crate::error::{config, domain, Error, Result};

/// A population to draw private values from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Cauchy { loc: f64, scale: f64 },
    /// Density `0.625·(1 − x)·(1 + x)³` on `(−1, 1)`, i.e. `2·Beta(4, 2) − 1`.
    Pert,
}

impl Distribution {
    pub const STANDARD_NORMAL: Self = Self::Normal { mean: 0.0, sd: 1.0 };
    pub const SYMMETRIC_UNIFORM: Self = Self::Uniform { lo: -1.0, hi: 1.0 };
    pub const STANDARD_CAUCHY: Self = Self::Cauchy { loc: 0.0, scale: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Self::Cauchy { loc, scale } => loc.is_finite() && scale > 0.0 && scale.is_finite(),
            Self::Pert => true,
        };
        if ok {
            Ok(())
        } else {
            Err(config(format!("invalid distribution parameters: {self}")))
        }
    }

    /// Short label, used in reports and RNG stream ids.
    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Same law moved right by `c`. PERT has no location parameter and is
    /// rejected.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        match *self {
            Self::Normal { mean, sd } => Ok(Self::Normal { mean: mean + c, sd }),
            Self::Uniform { lo, hi } => Ok(Self::Uniform { lo: lo + c, hi: hi + c }),
            Self::Cauchy { loc, scale } => Ok(Self::Cauchy { loc: loc + c, scale }),
            Self::Pert => Err(config("the PERT population has no location parameter")),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => normal(mean, sd).cdf(x),
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Cauchy { loc, scale } => 0.5 + ((x - loc) / scale).atan() / PI,
            Self::Pert => {
                let u = ((1.0 + x) / 2.0).clamp(0.0, 1.0);
                pert_unit_cdf(u)
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => normal(mean, sd).pdf(x),
            Self::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Cauchy { loc, scale } => {
                let z = (x - loc) / scale;
                1.0 / (PI * scale * (1.0 + z * z))
            }
            Self::Pert => {
                if (-1.0..=1.0).contains(&x) {
                    0.625 * (1.0 - x) * (1.0 + x).powi(3)
                } else {
                    0.0
                }
            }
        }
    }

    /// Inverse CDF at `tau ∈ (0, 1)`.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(domain(format!("quantile level must lie in (0, 1), got {tau}")));
        }
        Ok(match *self {
            Self::Normal { mean, sd } => normal(mean, sd).inverse_cdf(tau),
            Self::Uniform { lo, hi } => lo + tau * (hi - lo),
            Self::Cauchy { loc, scale } => loc + scale * (PI * (tau - 0.5)).tan(),
            Self::Pert => 2.0 * pert_unit_quantile(tau) - 1.0,
        })
    }

    /// Sampler for this law, optionally adding uniform jitter on `(−h, h)`.
    pub fn source(&self, jitter: Option<f64>) -> Result<DataSource> {
        self.validate()?;
        let inner = match *self {
            Self::Normal { mean, sd } => Inner::Normal(rand_distr::Normal::new(mean, sd).map_err(|e| config(e.to_string()))?),
            Self::Uniform { lo, hi } => Inner::Uniform(rand_distr::Uniform::new(lo, hi).map_err(|e| config(e.to_string()))?),
            Self::Cauchy { loc, scale } => Inner::Cauchy { loc, scale },
            Self::Pert => Inner::Pert(rand_distr::Beta::new(4.0, 2.0).map_err(|e| config(e.to_string()))?),
        };
        let jitter = match jitter {
            None => None,
            Some(h) if h > 0.0 && h.is_finite() => Some(h),
            Some(h) => return Err(config(format!("jitter half-width must be positive, got {h}"))),
        };
        Ok(DataSource { inner, jitter })
    }

    /// Plain sampler without jitter.
    pub fn sampler(&self) -> DataSource {
        self.source(None).expect("distribution parameters must be valid")
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }
}

fn normal(mean: f64, sd: f64) -> StatrsNormal {
    StatrsNormal::new(mean, sd).expect("validated normal parameters")
}

/// CDF of Beta(4, 2) on `[0, 1]`: `5u⁴ − 4u⁵`.
fn pert_unit_cdf(u: f64) -> f64 {
    let u4 = u * u * u * u;
    u4 * (5.0 - 4.0 * u)
}

fn pert_unit_quantile(tau: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if pert_unit_cdf(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            Self::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Self::Cauchy { loc, scale } => write!(f, "cauchy({loc},{scale})"),
            Self::Pert => write!(f, "pert"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// Accepts `normal`, `uniform`, `cauchy`, `pert` (standard parameters) or
    /// `name(a,b)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, params) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| config(format!("unbalanced parentheses in '{s}'")))?;
                let params = inner
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| config(format!("bad number '{p}' in '{s}'"))))
                    .collect::<Result<Vec<_>>>()?;
                (name.trim().to_string(), Some(params))
            }
            None => (s.clone(), None),
        };
        let two = |default: (f64, f64)| -> Result<(f64, f64)> {
            match params.as_deref() {
                None => Ok(default),
                Some([a, b]) => Ok((*a, *b)),
                Some(_) => Err(config(format!("'{name}' takes two parameters"))),
            }
        };
        let dist = match name.as_str() {
            "normal" => {
                let (mean, sd) = two((0.0, 1.0))?;
                Self::Normal { mean, sd }
            }
            "uniform" => {
                let (lo, hi) = two((-1.0, 1.0))?;
                Self::Uniform { lo, hi }
            }
            "cauchy" => {
                let (loc, scale) = two((0.0, 1.0))?;
                Self::Cauchy { loc, scale }
            }
            "pert" if params.is_none() => Self::Pert,
            "pert" => return Err(config("'pert' takes no parameters")),
            other => return Err(config(format!("unknown distribution '{other}'"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, Copy)]
enum Inner {
    Normal(rand_distr::Normal<f64>),
    Uniform(rand_distr::Uniform<f64>),
    Cauchy { loc: f64, scale: f64 },
    Pert(rand_distr::Beta<f64>),
}

/// Prepared sampler for a [`Distribution`].
#[derive(Debug, Clone, Copy)]
pub struct DataSource {
    inner: Inner,
    jitter: Option<f64>,
}

impl rand_distr::Distribution<f64> for DataSource {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match &self.inner {
            Inner::Normal(d) => d.sample(rng),
            Inner::Uniform(d) => d.sample(rng),
            Inner::Cauchy { loc, scale } => {
                // Inverse CDF; the open-interval uniform keeps tan finite.
                let u: f64 = rng.sample(rand_distr::OpenClosed01);
                loc + scale * (PI * (u - 0.5)).tan()
            }
            Inner::Pert(d) => 2.0 * d.sample(rng) - 1.0,
        };
        match self.jitter {
            Some(h) => x + rng.random_range(-h..h),
            None => x,
        }
    }
}
