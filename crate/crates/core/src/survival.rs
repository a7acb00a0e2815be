//! Parametric time-to-event distributions.
//!
//! Six families share one interface: density, survivor function S(t), hazard
//! h(t) = f(t)/S(t), cumulative hazard H(t) = -ln S(t), and quantiles. All
//! sampling is by inversion of the survivor function, S(t) = 1 - u, so one
//! uniform draw always yields one event time and parallel RNG streams never
//! drift out of alignment. Left-truncated sampling conditions on survival to
//! the truncation point: S(t) / S(lower) = 1 - u.
//!
//! Parameterizations: Weibull and log-logistic use (shape, scale) with
//! S(t) = exp(-(t/scale)^shape) and 1/(1 + (t/scale)^shape) respectively;
//! Gompertz uses (shape, rate) with h(t) = rate * exp(shape * t) and admits
//! negative shapes (an improper distribution with positive mass at infinity);
//! gamma uses (shape, rate); the log-normal uses (meanlog, sdlog).
//!
//! Gamma and log-normal quantiles have no closed form and are found by a
//! bracketed root search on the survivor function.

use crate::math::{
    self, exp, expm1, invert_nonincreasing, log, log1p, normal_pdf, pow, reg_inc_gamma,
};
use crate::{Error, Result};

/// A fully parameterized time-to-event distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Gompertz { shape: f64, rate: f64 },
    LogNormal { meanlog: f64, sdlog: f64 },
    LogLogistic { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
}

/// The evaluatable functions of a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvFn {
    Pdf,
    Survival,
    Hazard,
    CumHazard,
    Quantile,
}

/// Distribution family tag, used to build distributions from linear
/// predictors on each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Exponential,
    Weibull,
    Gompertz,
    LogNormal,
    LogLogistic,
    Gamma,
}

/// Inverse-link applied to a linear predictor to obtain a natural parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Log,
    Identity,
}

impl Link {
    pub fn inverse(&self, x: f64) -> f64 {
        match self {
            Link::Log => exp(x),
            Link::Identity => x,
        }
    }
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Gompertz => "gompertz",
            Family::LogNormal => "lognormal",
            Family::LogLogistic => "loglogistic",
            Family::Gamma => "gamma",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Some(match name {
            "exponential" | "exp" => Family::Exponential,
            "weibull" => Family::Weibull,
            "gompertz" => Family::Gompertz,
            "lognormal" | "lnorm" => Family::LogNormal,
            "loglogistic" | "llogis" => Family::LogLogistic,
            "gamma" => Family::Gamma,
            _ => return None,
        })
    }

    /// Natural parameters in canonical order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Family::Exponential => &["rate"],
            Family::Weibull => &["shape", "scale"],
            Family::Gompertz => &["shape", "rate"],
            Family::LogNormal => &["meanlog", "sdlog"],
            Family::LogLogistic => &["shape", "scale"],
            Family::Gamma => &["shape", "rate"],
        }
    }

    /// Log links for positivity-constrained parameters, identity otherwise.
    pub fn default_links(&self) -> &'static [Link] {
        match self {
            Family::Exponential => &[Link::Log],
            Family::Weibull => &[Link::Log, Link::Log],
            Family::Gompertz => &[Link::Identity, Link::Log],
            Family::LogNormal => &[Link::Identity, Link::Log],
            Family::LogLogistic => &[Link::Log, Link::Log],
            Family::Gamma => &[Link::Log, Link::Log],
        }
    }

    /// Builds and validates a distribution from natural parameters in
    /// canonical order.
    pub fn build(&self, params: &[f64]) -> Result<Distribution> {
        if params.len() != self.param_names().len() {
            return Err(Error::DimensionMismatch {
                what: alloc::format!(
                    "{} takes {} parameters, got {}",
                    self.name(),
                    self.param_names().len(),
                    params.len()
                ),
            });
        }
        let d = match self {
            Family::Exponential => Distribution::Exponential { rate: params[0] },
            Family::Weibull => Distribution::Weibull {
                shape: params[0],
                scale: params[1],
            },
            Family::Gompertz => Distribution::Gompertz {
                shape: params[0],
                rate: params[1],
            },
            Family::LogNormal => Distribution::LogNormal {
                meanlog: params[0],
                sdlog: params[1],
            },
            Family::LogLogistic => Distribution::LogLogistic {
                shape: params[0],
                scale: params[1],
            },
            Family::Gamma => Distribution::Gamma {
                shape: params[0],
                rate: params[1],
            },
        };
        d.validate()?;
        Ok(d)
    }
}

fn check_positive(family: &'static str, param: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDistribution {
            family,
            param,
            value,
        })
    }
}

fn check_finite(family: &'static str, param: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistribution {
            family,
            param,
            value,
        })
    }
}

impl Distribution {
    pub fn family(&self) -> Family {
        match self {
            Distribution::Exponential { .. } => Family::Exponential,
            Distribution::Weibull { .. } => Family::Weibull,
            Distribution::Gompertz { .. } => Family::Gompertz,
            Distribution::LogNormal { .. } => Family::LogNormal,
            Distribution::LogLogistic { .. } => Family::LogLogistic,
            Distribution::Gamma { .. } => Family::Gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Exponential { rate } => check_positive("exponential", "rate", rate),
            Distribution::Weibull { shape, scale } => {
                check_positive("weibull", "shape", shape)?;
                check_positive("weibull", "scale", scale)
            }
            Distribution::Gompertz { shape, rate } => {
                check_finite("gompertz", "shape", shape)?;
                check_positive("gompertz", "rate", rate)
            }
            Distribution::LogNormal { meanlog, sdlog } => {
                check_finite("lognormal", "meanlog", meanlog)?;
                check_positive("lognormal", "sdlog", sdlog)
            }
            Distribution::LogLogistic { shape, scale } => {
                check_positive("loglogistic", "shape", shape)?;
                check_positive("loglogistic", "scale", scale)
            }
            Distribution::Gamma { shape, rate } => {
                check_positive("gamma", "shape", shape)?;
                check_positive("gamma", "rate", rate)
            }
        }
    }

    /// Survivor function S(t). Defined for t >= 0 with S(0) = 1.
    pub fn survival(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match *self {
            Distribution::Exponential { rate } => exp(-rate * t),
            Distribution::Weibull { shape, scale } => exp(-pow(t / scale, shape)),
            Distribution::Gompertz { .. } => exp(-self.cum_hazard(t)),
            Distribution::LogNormal { meanlog, sdlog } => {
                if t <= 0.0 {
                    1.0
                } else {
                    math::normal_cdf(-(log(t) - meanlog) / sdlog)
                }
            }
            Distribution::LogLogistic { shape, scale } => 1.0 / (1.0 + pow(t / scale, shape)),
            Distribution::Gamma { shape, rate } => 1.0 - reg_inc_gamma(shape, rate * t),
        }
    }

    /// Cumulative hazard H(t) = -ln S(t).
    pub fn cum_hazard(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match *self {
            Distribution::Exponential { rate } => rate * t,
            Distribution::Weibull { shape, scale } => pow(t / scale, shape),
            Distribution::Gompertz { shape, rate } => {
                if shape == 0.0 {
                    rate * t
                } else {
                    rate / shape * expm1(shape * t)
                }
            }
            Distribution::LogNormal { .. } => -log(self.survival(t)),
            Distribution::LogLogistic { shape, scale } => log1p(pow(t / scale, shape)),
            Distribution::Gamma { .. } => -log(self.survival(t)),
        }
    }

    /// Hazard rate h(t) = f(t) / S(t).
    pub fn hazard(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match *self {
            Distribution::Exponential { rate } => rate,
            Distribution::Weibull { shape, scale } => shape / scale * pow(t / scale, shape - 1.0),
            Distribution::Gompertz { shape, rate } => rate * exp(shape * t),
            Distribution::LogNormal { .. } => self.pdf(t) / self.survival(t),
            Distribution::LogLogistic { shape, scale } => {
                shape / scale * pow(t / scale, shape - 1.0) / (1.0 + pow(t / scale, shape))
            }
            Distribution::Gamma { .. } => self.pdf(t) / self.survival(t),
        }
    }

    /// Density f(t).
    pub fn pdf(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match *self {
            Distribution::Exponential { .. }
            | Distribution::Weibull { .. }
            | Distribution::Gompertz { .. }
            | Distribution::LogLogistic { .. } => self.hazard(t) * self.survival(t),
            Distribution::LogNormal { meanlog, sdlog } => {
                if t <= 0.0 {
                    0.0
                } else {
                    let z = (log(t) - meanlog) / sdlog;
                    normal_pdf(z) / (t * sdlog)
                }
            }
            Distribution::Gamma { shape, rate } => {
                if t > 0.0 {
                    exp(shape * log(rate) + (shape - 1.0) * log(t) - rate * t
                        - math::ln_gamma(shape))
                } else if shape < 1.0 {
                    f64::INFINITY
                } else if shape == 1.0 {
                    rate
                } else {
                    0.0
                }
            }
        }
    }

    /// Quantile function. `p = 1` returns positive infinity; improper
    /// distributions (negative-shape Gompertz) return positive infinity for
    /// quantiles beyond their limiting survival mass.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::ProbabilityOutOfRange {
                value: p,
                requirement: "[0, 1] for quantiles",
            });
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        self.inv_survival(1.0 - p)
    }

    /// Inverse-CDF sample: the t with S(t) = 1 - u. Strictly increasing in u.
    pub fn sample(&self, u: f64) -> Result<f64> {
        check_open_unit(u)?;
        self.inv_survival(1.0 - u)
    }

    /// Left-truncated inverse-CDF sample: the t >= lower with
    /// S(t) / S(lower) = 1 - u. With `lower = 0` this reduces bit-exactly to
    /// `sample`.
    pub fn sample_truncated(&self, lower: f64, u: f64) -> Result<f64> {
        check_open_unit(u)?;
        if !(lower >= 0.0) || !lower.is_finite() {
            return Err(Error::QueryOutOfRange {
                what: alloc::format!("truncation point {lower} must be finite and nonnegative"),
            });
        }
        let s_lower = self.survival(lower);
        if s_lower <= 0.0 {
            return Err(Error::TruncationBeyondSupport { lower });
        }
        let t = self.inv_survival((1.0 - u) * s_lower)?;
        Ok(if t < lower { lower } else { t })
    }

    /// The t with S(t) = s, for s in (0, 1]. Returns infinity when the
    /// distribution never falls to s (improper Gompertz).
    fn inv_survival(&self, s: f64) -> Result<f64> {
        debug_assert!(s > 0.0 && s <= 1.0);
        if s >= 1.0 {
            return Ok(0.0);
        }
        let h = -log(s);
        Ok(match *self {
            Distribution::Exponential { rate } => h / rate,
            Distribution::Weibull { shape, scale } => scale * pow(h, 1.0 / shape),
            Distribution::Gompertz { shape, rate } => {
                if shape == 0.0 {
                    h / rate
                } else {
                    let arg = shape * h / rate;
                    if arg <= -1.0 {
                        // Total cumulative hazard never reaches h.
                        f64::INFINITY
                    } else {
                        log1p(arg) / shape
                    }
                }
            }
            Distribution::LogLogistic { shape, scale } => scale * pow(1.0 / s - 1.0, 1.0 / shape),
            Distribution::LogNormal { meanlog, .. } => {
                self.invert_survival_numerically(s, exp(meanlog))?
            }
            Distribution::Gamma { shape, rate } => {
                self.invert_survival_numerically(s, shape / rate)?
            }
        })
    }

    /// Bracketed root search on S(t) = s. `scale_guess` seeds the upper
    /// bracket, which doubles until it encloses the root.
    fn invert_survival_numerically(&self, s: f64, scale_guess: f64) -> Result<f64> {
        let mut hi = scale_guess.max(1e-10);
        let mut doublings = 0;
        while self.survival(hi) > s {
            hi *= 2.0;
            doublings += 1;
            if doublings > 2_000 {
                return Ok(f64::INFINITY);
            }
        }
        invert_nonincreasing(|t| self.survival(t), s, 0.0, hi)
    }

    /// Checked evaluation of any distribution function at `x` (a time for the
    /// first four, a probability for quantiles).
    pub fn eval(&self, f: SurvFn, x: f64) -> Result<f64> {
        match f {
            SurvFn::Quantile => self.quantile(x),
            _ => {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::QueryOutOfRange {
                        what: alloc::format!("time argument {x} must be finite and nonnegative"),
                    });
                }
                Ok(match f {
                    SurvFn::Pdf => self.pdf(x),
                    SurvFn::Survival => self.survival(x),
                    SurvFn::Hazard => self.hazard(x),
                    SurvFn::CumHazard => self.cum_hazard(x),
                    SurvFn::Quantile => unreachable!(),
                })
            }
        }
    }
}

fn check_open_unit(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange {
            value: u,
            requirement: "the open interval (0, 1) for sampling",
        })
    }
}
