//! Parametric offspring and immigration laws.
//!
//! Offspring laws are closed under convolution, so the sum of `x` iid draws
//! is sampled in O(1) from a single law with a scaled parameter. Immigration
//! laws are described by their survival function `S(x) = P(B > x)` and
//! sampled by inversion.

use std::fmt;
use std::str::FromStr;

use rand::distr::Distribution;
use rand_distr::{Binomial, Gamma, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Largest value a Poisson draw may take before we report overflow.
const POISSON_CEILING: f64 = 1.8e19;
const SERIES_CAP: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffspringFamily {
    Poisson {
        rate: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// Failures before the first success, support {0, 1, ...}.
    Geometric0 {
        p: f64,
    },
    Binomial {
        trials: u64,
        p: f64,
    },
}

impl OffspringFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Poisson { rate } => rate.is_finite() && rate >= 0.0,
            Self::Bernoulli { p } | Self::Binomial { p, .. } => (0.0..=1.0).contains(&p),
            Self::Geometric0 { p } => p > 0.0 && p <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("offspring law {self}")))
        }
    }

    /// Conditional mean m(xi) of one offspring count.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Poisson { rate } => rate,
            Self::Bernoulli { p } => p,
            Self::Geometric0 { p } => (1.0 - p) / p,
            Self::Binomial { trials, p } => trials as f64 * p,
        }
    }

    /// Sum of `x` iid draws, via the closed form of the x-fold convolution.
    pub fn sample_sum(&self, x: u64, rng: &mut RngState) -> Result<u64> {
        if x == 0 {
            return Ok(0);
        }
        match *self {
            Self::Poisson { rate } => poisson_draw(rate * x as f64, rng),
            Self::Bernoulli { p } => binomial_draw(x, p, rng),
            Self::Binomial { trials, p } => {
                let n = x.checked_mul(trials).ok_or(Error::Overflow)?;
                binomial_draw(n, p, rng)
            }
            Self::Geometric0 { p } => {
                if p >= 1.0 {
                    return Ok(0);
                }
                // NegativeBinomial(x, p) as a gamma-mixed Poisson.
                let gamma = Gamma::new(x as f64, (1.0 - p) / p)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let lambda = gamma.sample(rng);
                poisson_draw(lambda, rng)
            }
        }
    }

    /// Single-draw pmf on {0, ..., len-1}.
    pub fn pmf_vec(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if len == 0 {
            return out;
        }
        match *self {
            Self::Poisson { rate } => {
                let mut term = (-rate).exp();
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = term;
                    term *= rate / (k + 1) as f64;
                }
            }
            Self::Bernoulli { p } => {
                out[0] = 1.0 - p;
                if len > 1 {
                    out[1] = p;
                }
            }
            Self::Geometric0 { p } => {
                let mut term = p;
                for slot in out.iter_mut() {
                    *slot = term;
                    term *= 1.0 - p;
                }
            }
            Self::Binomial { trials, p } => {
                let top = (trials as usize).min(len - 1);
                for (k, slot) in out.iter_mut().enumerate().take(top + 1) {
                    *slot = binomial_pmf(trials, p, k as u64);
                }
            }
        }
        out
    }

    /// E[A^order] for one offspring draw.
    pub fn moment(&self, order: f64, tol: f64) -> Result<f64> {
        if order == 0.0 {
            return Ok(1.0);
        }
        match *self {
            Self::Bernoulli { p } => Ok(p),
            Self::Binomial { trials, p } => Ok((0..=trials)
                .map(|k| (k as f64).powf(order) * binomial_pmf(trials, p, k))
                .sum()),
            Self::Poisson { rate } if order.fract() == 0.0 && order <= 64.0 => {
                Ok(touchard(order as usize, rate))
            }
            Self::Poisson { rate } => {
                if rate == 0.0 {
                    return Ok(0.0);
                }
                // t_{k+1}/t_k = ((k+1)/k)^r * rate/(k+1), decreasing in k.
                series_moment(order, tol, (-rate).exp(), |k| rate / (k + 1) as f64)
            }
            Self::Geometric0 { p } => {
                if p >= 1.0 {
                    return Ok(0.0);
                }
                series_moment(order, tol, p, |_| 1.0 - p)
            }
        }
    }
}

/// Sum of `k^order * pmf_k` where `pmf_{k+1} = pmf_k * step(k)`, stopped once
/// the geometric tail bound drops below `tol`. Requires the term ratio to be
/// eventually decreasing and below one.
fn series_moment(order: f64, tol: f64, pmf0: f64, step: impl Fn(usize) -> f64) -> Result<f64> {
    let mut pmf = pmf0;
    let mut sum = 0.0;
    for k in 0..SERIES_CAP {
        let term = (k as f64).powf(order) * pmf;
        sum += term;
        let next_pmf = pmf * step(k);
        if k >= 1 {
            let next_term = ((k + 1) as f64).powf(order) * next_pmf;
            let ratio = next_term / term;
            if ratio < 1.0 && next_term / (1.0 - ratio) <= tol {
                return Ok(sum + next_term);
            }
            if term == 0.0 && next_term == 0.0 {
                return Ok(sum);
            }
        }
        pmf = next_pmf;
    }
    Err(Error::SeriesDivergence)
}

/// Touchard polynomial: E[N^r] for N ~ Poisson(rate).
fn touchard(r: usize, rate: f64) -> f64 {
    // Stirling numbers of the second kind, row r.
    let mut row = vec![0.0f64; r + 1];
    row[0] = 1.0;
    for n in 1..=r {
        for k in (1..=n).rev() {
            row[k] = k as f64 * row[k] + row[k - 1];
        }
        row[0] = 0.0;
    }
    row.iter()
        .enumerate()
        .map(|(j, s)| s * rate.powi(j as i32))
        .sum()
}

fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (n, k) = (n as f64, k as f64);
    let log_choose = ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0);
    (log_choose + k * p.ln() + (n - k) * (1.0 - p).ln()).exp()
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 relative.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[inline]
fn poisson_draw(mean: f64, rng: &mut RngState) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    if !(mean < Poisson::<f64>::MAX_LAMBDA) {
        return Err(Error::Overflow);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let v: f64 = d.sample(rng);
    if v >= POISSON_CEILING {
        return Err(Error::Overflow);
    }
    Ok(v as u64)
}

#[inline]
fn binomial_draw(n: u64, p: f64, rng: &mut RngState) -> Result<u64> {
    let d = Binomial::new(n, p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(d.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImmigrationFamily {
    /// Survival `min(1, c * ln(e + x)^beta * (1 + x)^-kappa)`.
    DiscretePareto {
        kappa: f64,
        c: f64,
        beta: f64,
    },
    Bernoulli {
        q: f64,
    },
    Constant {
        b: u64,
    },
    Geometric0 {
        p: f64,
    },
}

impl ImmigrationFamily {
    pub fn pareto(kappa: f64, c: f64) -> Self {
        Self::DiscretePareto {
            kappa,
            c,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::DiscretePareto { kappa, c, beta } => {
                kappa > 0.0 && kappa.is_finite() && c > 0.0 && c.is_finite() && beta >= 0.0
            }
            Self::Bernoulli { q } => (0.0..=1.0).contains(&q),
            Self::Constant { .. } => true,
            Self::Geometric0 { p } => p > 0.0 && p <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("immigration law {self}")))
        }
    }

    /// `P(B > x)`; `x` may be fractional, in which case it is floored.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        let x = x.floor();
        match *self {
            Self::DiscretePareto { kappa, c, beta } => {
                let slow = if beta == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::E + x).ln().powf(beta)
                };
                (c * slow * (1.0 + x).powf(-kappa)).min(1.0)
            }
            Self::Bernoulli { q } => {
                if x < 1.0 {
                    q
                } else {
                    0.0
                }
            }
            Self::Constant { b } => {
                if x < b as f64 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Geometric0 { p } => (1.0 - p).powf(x + 1.0),
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        let below = if k == 0 {
            1.0
        } else {
            self.survival((k - 1) as f64)
        };
        (below - self.survival(k as f64)).max(0.0)
    }

    pub fn pmf_vec(&self, len: usize) -> Vec<f64> {
        (0..len as u64).map(|k| self.pmf(k)).collect()
    }

    /// Whether the survival function is eventually regularly varying.
    pub fn is_heavy_tailed(&self) -> bool {
        matches!(self, Self::DiscretePareto { .. })
    }

    /// `lim S_self(x) / S_other(x)` for two Pareto laws with equal index and
    /// log exponent; `None` when the ratio has no finite positive limit.
    pub fn tail_constant_over(&self, other: &Self) -> Option<f64> {
        match (*self, *other) {
            (
                Self::DiscretePareto {
                    kappa: k1,
                    c: c1,
                    beta: b1,
                },
                Self::DiscretePareto {
                    kappa: k2,
                    c: c2,
                    beta: b2,
                },
            ) if k1 == k2 && b1 == b2 => Some(c1 / c2),
            _ => None,
        }
    }

    /// Inversion: the smallest `x >= 0` with `S(x) <= u`.
    pub fn quantile(&self, u: f64) -> Result<u64> {
        if self.survival(0.0) <= u {
            return Ok(0);
        }
        let guess = match *self {
            Self::DiscretePareto {
                kappa,
                c,
                beta: 0.0,
            } => ((c / u).powf(1.0 / kappa) - 1.0).ceil(),
            Self::DiscretePareto { .. } => return self.bisect(u),
            Self::Bernoulli { .. } => 1.0,
            Self::Constant { b } => b as f64,
            Self::Geometric0 { p } => (u.ln() / (1.0 - p).ln()).ceil() - 1.0,
        };
        if !(guess < 9.0e18) {
            return Err(Error::Overflow);
        }
        let mut x = guess.max(0.0) as u64;
        // Floating-point fixup around the closed-form guess.
        while self.survival(x as f64) > u {
            x = x.checked_add(1).ok_or(Error::Overflow)?;
        }
        while x > 0 && self.survival((x - 1) as f64) <= u {
            x -= 1;
        }
        Ok(x)
    }

    fn bisect(&self, u: f64) -> Result<u64> {
        let mut lo = 0u64; // S(lo) > u
        let mut hi = 1u64;
        while self.survival(hi as f64) > u {
            lo = hi;
            hi = hi
                .checked_mul(2)
                .filter(|h| *h < (1 << 62))
                .ok_or(Error::Overflow)?;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.survival(mid as f64) > u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngState) -> Result<u64> {
        match *self {
            Self::Constant { b } => Ok(b),
            _ => self.quantile(rng.open01()),
        }
    }
}

impl fmt::Display for OffspringFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Poisson { rate } => write!(f, "poisson({rate})"),
            Self::Bernoulli { p } => write!(f, "bernoulli({p})"),
            Self::Geometric0 { p } => write!(f, "geometric0({p})"),
            Self::Binomial { trials, p } => write!(f, "binomial({trials}, {p})"),
        }
    }
}

impl fmt::Display for ImmigrationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::DiscretePareto { kappa, c, beta } => write!(f, "pareto({kappa}, {c}, {beta})"),
            Self::Bernoulli { q } => write!(f, "bernoulli({q})"),
            Self::Constant { b } => write!(f, "constant({b})"),
            Self::Geometric0 { p } => write!(f, "geometric0({p})"),
        }
    }
}

/// Splits `name(a, b, ...)` into the lowercase name and its arguments.
fn split_call(s: &str) -> Result<(String, Vec<f64>)> {
    let bad = || Error::InvalidParameter(format!("cannot parse law `{s}`"));
    let s = s.trim();
    let open = s.find('(').ok_or_else(bad)?;
    let body = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let name = s[..open].trim().to_ascii_lowercase();
    let args = if body.trim().is_empty() {
        Vec::new()
    } else {
        body.split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    Ok((name, args))
}

fn as_count(v: f64, what: &str) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.0e18 {
        Ok(v as u64)
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} must be a non-negative integer"
        )))
    }
}

impl FromStr for OffspringFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let law = match (name.as_str(), args.as_slice()) {
            ("poisson", &[rate]) => Self::Poisson { rate },
            ("bernoulli", &[p]) => Self::Bernoulli { p },
            ("geometric0", &[p]) => Self::Geometric0 { p },
            ("binomial", &[n, p]) => Self::Binomial {
                trials: as_count(n, "trials")?,
                p,
            },
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown offspring law `{s}`"
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }
}

impl FromStr for ImmigrationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let law = match (name.as_str(), args.as_slice()) {
            ("pareto", &[kappa, c]) => Self::DiscretePareto {
                kappa,
                c,
                beta: 0.0,
            },
            ("pareto", &[kappa, c, beta]) => Self::DiscretePareto { kappa, c, beta },
            ("bernoulli", &[q]) => Self::Bernoulli { q },
            ("constant", &[b]) => Self::Constant {
                b: as_count(b, "constant")?,
            },
            ("geometric0", &[p]) => Self::Geometric0 { p },
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown immigration law `{s}`"
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }
}
