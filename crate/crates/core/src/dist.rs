//! Densities, quantiles and samplers for the distribution families the model uses.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit requires 0 < p < 1, got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln inv_logit(x)`.
pub fn log_inv_logit(x: f64) -> f64 {
    -softplus(-x)
}

/// Location/dispersion negative binomial: mean `mu`, variance `mu + mu^2 / phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBin2Params {
    pub mu: f64,
    pub phi: f64,
}

impl NegBin2Params {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Domain(format!(
                "NegBin2 requires mu > 0 and phi > 0, got mu={mu}, phi={phi}"
            )));
        }
        Ok(Self { mu, phi })
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn variance(&self) -> f64 {
        self.mu + self.mu * self.mu / self.phi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // Gamma-Poisson mixture.
        let rate = Gamma::new(self.phi, self.mu / self.phi)
            .expect("validated parameters")
            .sample(rng);
        sample_poisson(rate, rng)
    }
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate > 1e15 {
        // Normal approximation beyond what the Poisson sampler accepts.
        let z: f64 = rng.sample(StandardNormal);
        return (rate + rate.sqrt() * z).max(0.0).round() as u64;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

pub fn negbin2_logpmf(y: u64, mu: f64, phi: f64) -> Result<f64> {
    NegBin2Params::new(mu, phi)?;
    Ok(negbin2_logpmf_log_mu(y, mu.ln(), phi).value)
}

/// Log-pmf and its partial derivatives with respect to `ln mu` and `phi`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NegBin2Eval {
    pub value: f64,
    pub d_log_mu: f64,
    pub d_phi: f64,
}

pub(crate) fn negbin2_logpmf_log_mu(y: u64, log_mu: f64, phi: f64) -> NegBin2Eval {
    let yf = y as f64;
    let mu = log_mu.exp();
    // ln(mu + phi) computed stably for either ordering.
    let log_mu_phi = if log_mu > phi.ln() {
        log_mu + (phi / mu).ln_1p()
    } else {
        phi.ln() + (mu / phi).ln_1p()
    };
    let lgamma_ratio = if y == 0 {
        0.0
    } else if y < 64 && phi > 1e6 {
        // Exact finite product avoids cancellation between two huge ln_gamma values.
        (0..y).map(|k| (phi + k as f64).ln()).sum::<f64>()
    } else {
        ln_gamma(yf + phi) - ln_gamma(phi)
    };
    let value = lgamma_ratio - ln_gamma(yf + 1.0) - phi * (mu / phi).ln_1p()
        + if y == 0 { 0.0 } else { yf * (log_mu - log_mu_phi) };
    let frac = 1.0 / (1.0 + mu / phi); // phi / (mu + phi)
    let d_log_mu = (yf - mu) * frac;
    let digamma_diff = if y == 0 {
        0.0
    } else if y < 64 && phi > 1e6 {
        (0..y).map(|k| 1.0 / (phi + k as f64)).sum::<f64>()
    } else {
        digamma(yf + phi) - digamma(phi)
    };
    // ln(phi/(mu+phi)) + 1 - (phi+y)/(mu+phi) == -ln1p(mu/phi) + (mu - y)/(mu+phi)
    let d_phi = digamma_diff - (mu / phi).ln_1p() + (mu - yf) / (mu + phi);
    NegBin2Eval {
        value,
        d_log_mu,
        d_phi,
    }
}

pub fn poisson_logpmf(y: u64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("Poisson rate must be positive, got {rate}")));
    }
    let yf = y as f64;
    Ok(yf * rate.ln() - rate - ln_gamma(yf + 1.0))
}

/// Family tag of a [`DistSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// (mean, sd)
    Normal,
    /// (log-mean, log-sd)
    Lognormal,
    /// (shape, rate)
    GammaShapeRate,
    /// (scale)
    HalfNormal,
    /// concentration vector
    Dirichlet,
    /// (trials, p_1, ..., p_k)
    Multinomial,
    /// (rate)
    Poisson,
    /// (mu, phi)
    NegBin2,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "Normal",
            Family::Lognormal => "Lognormal",
            Family::GammaShapeRate => "GammaShapeRate",
            Family::HalfNormal => "HalfNormal",
            Family::Dirichlet => "Dirichlet",
            Family::Multinomial => "Multinomial",
            Family::Poisson => "Poisson",
            Family::NegBin2 => "NegBin2",
        }
    }

    fn is_discrete(self) -> bool {
        matches!(self, Family::Poisson | Family::NegBin2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    pub family: Family,
    pub params: Vec<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

impl DistSpec {
    pub fn new(family: Family, params: Vec<f64>) -> Result<Self> {
        let spec = Self { family, params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(Family::Normal, vec![mean, sd])
    }

    pub fn lognormal(log_mean: f64, log_sd: f64) -> Result<Self> {
        Self::new(Family::Lognormal, vec![log_mean, log_sd])
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(Family::GammaShapeRate, vec![shape, rate])
    }

    pub fn half_normal(scale: f64) -> Result<Self> {
        Self::new(Family::HalfNormal, vec![scale])
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let arity = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "{} takes {n} parameters, got {}",
                    self.family.name(),
                    p.len()
                )))
            }
        };
        match self.family {
            Family::Normal | Family::Lognormal => {
                arity(2)?;
                if !p[0].is_finite() {
                    return Err(Error::Domain("location must be finite".into()));
                }
                positive("scale", p[1])
            }
            Family::GammaShapeRate => {
                arity(2)?;
                positive("shape", p[0])?;
                positive("rate", p[1])
            }
            Family::HalfNormal => {
                arity(1)?;
                positive("scale", p[0])
            }
            Family::Poisson => {
                arity(1)?;
                positive("rate", p[0])
            }
            Family::NegBin2 => {
                arity(2)?;
                positive("mu", p[0])?;
                positive("phi", p[1])
            }
            Family::Dirichlet => {
                if p.len() < 2 {
                    return Err(Error::Domain("Dirichlet needs at least two categories".into()));
                }
                p.iter().try_for_each(|&a| positive("concentration", a))
            }
            Family::Multinomial => {
                if p.len() < 3 || p[0] < 0.0 || p[0].fract() != 0.0 {
                    return Err(Error::Domain(
                        "Multinomial takes (trials, p_1, ..., p_k) with k >= 2".into(),
                    ));
                }
                let sum: f64 = p[1..].iter().sum();
                if p[1..].iter().any(|&q| !(0.0..=1.0).contains(&q)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain("Multinomial probabilities must lie on the simplex".into()));
                }
                Ok(())
            }
        }
    }

    /// Log-density (continuous families) or log-pmf (discrete ones) at a scalar point.
    pub fn ln_density(&self, x: f64) -> Result<f64> {
        let p = &self.params;
        Ok(match self.family {
            Family::Normal => normal_ln_pdf(x, p[0], p[1]),
            Family::Lognormal => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    normal_ln_pdf(x.ln(), p[0], p[1]) - x.ln()
                }
            }
            Family::GammaShapeRate => gamma_ln_pdf(x, p[0], p[1]),
            Family::HalfNormal => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    normal_ln_pdf(x, 0.0, p[0]) + LN_2
                }
            }
            Family::Poisson => match as_count(x) {
                Some(k) => poisson_logpmf(k, p[0])?,
                None => f64::NEG_INFINITY,
            },
            Family::NegBin2 => match as_count(x) {
                Some(k) => negbin2_logpmf(k, p[0], p[1])?,
                None => f64::NEG_INFINITY,
            },
            Family::Dirichlet | Family::Multinomial => {
                return Err(Error::Unsupported(self.family.name()))
            }
        })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        let p = &self.params;
        Ok(match self.family {
            Family::Normal => normal_cdf((x - p[0]) / p[1]),
            Family::Lognormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf((x.ln() - p[0]) / p[1])
                }
            }
            Family::GammaShapeRate => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(p[0], p[1] * x)
                }
            }
            Family::HalfNormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - erfc(x / (p[0] * std::f64::consts::SQRT_2))
                }
            }
            Family::Poisson => {
                if x < 0.0 {
                    0.0
                } else {
                    gamma_ur(x.floor() + 1.0, p[0])
                }
            }
            Family::NegBin2 => {
                if x < 0.0 {
                    0.0
                } else {
                    let (mu, phi) = (p[0], p[1]);
                    beta_reg(phi, x.floor() + 1.0, phi / (mu + phi))
                }
            }
            Family::Dirichlet | Family::Multinomial => {
                return Err(Error::Unsupported(self.family.name()))
            }
        })
    }

    pub fn mean(&self) -> Result<f64> {
        let p = &self.params;
        Ok(match self.family {
            Family::Normal => p[0],
            Family::Lognormal => (p[0] + 0.5 * p[1] * p[1]).exp(),
            Family::GammaShapeRate => p[0] / p[1],
            Family::HalfNormal => p[0] * (2.0 / PI).sqrt(),
            Family::Poisson | Family::NegBin2 => p[0],
            Family::Dirichlet | Family::Multinomial => {
                return Err(Error::Unsupported(self.family.name()))
            }
        })
    }

    /// Inverse CDF by bisection with an expanding bracket.
    ///
    /// Discrete families return the smallest integer whose CDF reaches `prob`.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if matches!(self.family, Family::Dirichlet | Family::Multinomial) {
            return Err(Error::Unsupported(self.family.name()));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0,1), got {prob}")));
        }
        let positive_support = !matches!(self.family, Family::Normal);
        let centre = match self.family {
            Family::Normal => self.params[0],
            Family::Lognormal => self.params[0].exp(),
            _ => self.mean()?.max(f64::MIN_POSITIVE),
        };
        let scale = match self.family {
            Family::Normal => self.params[1],
            _ => centre.abs().max(1e-12),
        };

        let mut hi = centre + scale;
        let mut step = scale;
        while self.cdf(hi)? < prob {
            step *= 2.0;
            hi = centre + step;
            if !hi.is_finite() {
                return Err(Error::NoSolution(format!("bracket overflow for p={prob}")));
            }
        }
        let mut lo = if positive_support { 0.0 } else { centre - scale };
        if !positive_support {
            let mut step = scale;
            while self.cdf(lo)? > prob {
                step *= 2.0;
                lo = centre - step;
                if !lo.is_finite() {
                    return Err(Error::NoSolution(format!("bracket overflow for p={prob}")));
                }
            }
        }

        if self.family.is_discrete() {
            let (mut lo, mut hi) = (lo.floor() as i64 - 1, hi.ceil() as i64);
            // Invariant: cdf(lo) < prob <= cdf(hi).
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if self.cdf(mid as f64)? >= prob {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi as f64);
        }

        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid)? < prob {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(lo.abs()).max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let p = &self.params;
        Ok(match self.family {
            Family::Normal => p[0] + p[1] * rng.sample::<f64, _>(StandardNormal),
            Family::Lognormal => (p[0] + p[1] * rng.sample::<f64, _>(StandardNormal)).exp(),
            Family::GammaShapeRate => Gamma::new(p[0], 1.0 / p[1])
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(rng),
            Family::HalfNormal => (p[0] * rng.sample::<f64, _>(StandardNormal)).abs(),
            Family::Poisson => sample_poisson(p[0], rng) as f64,
            Family::NegBin2 => NegBin2Params::new(p[0], p[1])?.sample(rng) as f64,
            Family::Dirichlet | Family::Multinomial => {
                return Err(Error::Unsupported(self.family.name()))
            }
        })
    }
}

fn as_count(x: f64) -> Option<u64> {
    (x >= 0.0 && x.fract() == 0.0).then_some(x as u64)
}

/// Log-density of a scalar continuous family and its derivative in `x`.
pub(crate) fn ln_density_with_derivative(spec: &DistSpec, x: f64) -> (f64, f64) {
    let p = &spec.params;
    match spec.family {
        Family::Normal => {
            let z = (x - p[0]) / p[1];
            (normal_ln_pdf(x, p[0], p[1]), -z / p[1])
        }
        Family::Lognormal => {
            if x <= 0.0 {
                return (f64::NEG_INFINITY, 0.0);
            }
            let lx = x.ln();
            let z = (lx - p[0]) / p[1];
            (normal_ln_pdf(lx, p[0], p[1]) - lx, (-z / p[1] - 1.0) / x)
        }
        Family::GammaShapeRate => {
            if x <= 0.0 {
                return (f64::NEG_INFINITY, 0.0);
            }
            (gamma_ln_pdf(x, p[0], p[1]), (p[0] - 1.0) / x - p[1])
        }
        Family::HalfNormal => {
            if x < 0.0 {
                return (f64::NEG_INFINITY, 0.0);
            }
            (normal_ln_pdf(x, 0.0, p[0]) + LN_2, -x / (p[0] * p[0]))
        }
        _ => (f64::NAN, f64::NAN),
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "empirical quantile of no data");
    let h = prob.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    DistSpec::normal(0.0, 1.0)?.quantile(p)
}

pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn dirichlet_ln_pdf(alpha: &[f64], p: &[f64]) -> Result<f64> {
    if alpha.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            actual: p.len(),
        });
    }
    DistSpec::new(Family::Dirichlet, alpha.to_vec())?;
    if p.iter().any(|&q| q <= 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let total: f64 = alpha.iter().sum();
    Ok(ln_gamma(total) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + alpha
            .iter()
            .zip(p)
            .map(|(&a, &q)| (a - 1.0) * q.ln())
            .sum::<f64>())
}

pub fn multinomial_ln_pmf(counts: &[u64], p: &[f64]) -> Result<f64> {
    if counts.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: counts.len(),
        });
    }
    let n: u64 = counts.iter().sum();
    let mut out = ln_gamma(n as f64 + 1.0);
    for (&k, &q) in counts.iter().zip(p) {
        out -= ln_gamma(k as f64 + 1.0);
        if k > 0 {
            if q <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            out += k as f64 * q.ln();
        }
    }
    Ok(out)
}

/// Marginal of multinomial counts under a Dirichlet prior on the probabilities.
pub fn dirichlet_multinomial_ln_pmf(counts: &[u64], alpha: &[f64]) -> Result<f64> {
    if counts.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            actual: counts.len(),
        });
    }
    DistSpec::new(Family::Dirichlet, alpha.to_vec())?;
    let n: u64 = counts.iter().sum();
    let a0: f64 = alpha.iter().sum();
    let mut out = ln_gamma(n as f64 + 1.0) + ln_gamma(a0) - ln_gamma(n as f64 + a0);
    for (&k, &a) in counts.iter().zip(alpha) {
        out += ln_gamma(k as f64 + a) - ln_gamma(a) - ln_gamma(k as f64 + 1.0);
    }
    Ok(out)
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    DistSpec::new(Family::Dirichlet, alpha.to_vec())?;
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // Every gamma draw underflowed; fall back to the largest concentration.
        let (imax, _) = alpha
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &a)| if a > acc.1 { (i, a) } else { acc });
        draws.iter_mut().enumerate().for_each(|(i, d)| *d = (i == imax) as u8 as f64);
    }
    Ok(draws)
}

/// Solve for the parameters of `family` that place the given quantiles.
///
/// Two-parameter families need two targets, one-parameter families need one.
pub fn solve_quantile_params(family: Family, targets: &[(f64, f64)]) -> Result<DistSpec> {
    let needed = match family {
        Family::Normal | Family::Lognormal | Family::GammaShapeRate => 2,
        Family::HalfNormal | Family::Poisson => 1,
        Family::NegBin2 | Family::Dirichlet | Family::Multinomial => {
            return Err(Error::Unsupported(family.name()))
        }
    };
    if targets.len() != needed {
        return Err(Error::Domain(format!(
            "{} needs exactly {needed} quantile targets, got {}",
            family.name(),
            targets.len()
        )));
    }
    for &(p, v) in targets {
        if !(p > 0.0 && p < 1.0) || !v.is_finite() {
            return Err(Error::Domain(format!("invalid target ({p}, {v})")));
        }
        if family != Family::Normal && v <= 0.0 {
            return Err(Error::NoSolution(format!(
                "{} quantiles must be positive, got {v}",
                family.name()
            )));
        }
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    match family {
        Family::Normal | Family::Lognormal => {
            let tr = |v: f64| if family == Family::Lognormal { v.ln() } else { v };
            let (p1, v1) = sorted[0];
            let (p2, v2) = sorted[1];
            if p1 == p2 || v2 <= v1 {
                return Err(Error::NoSolution(
                    "quantiles must increase with probability".into(),
                ));
            }
            let (z1, z2) = (normal_quantile(p1)?, normal_quantile(p2)?);
            let scale = (tr(v2) - tr(v1)) / (z2 - z1);
            let loc = tr(v1) - scale * z1;
            DistSpec::new(family, vec![loc, scale])
        }
        Family::GammaShapeRate => {
            let (p1, v1) = sorted[0];
            let (p2, v2) = sorted[1];
            if p1 == p2 || v2 <= v1 {
                return Err(Error::NoSolution(
                    "quantiles must increase with probability".into(),
                ));
            }
            let target = (v2 / v1).ln();
            // The quantile ratio of a unit-rate Gamma is decreasing in shape.
            let log_ratio = |shape: f64| -> Result<f64> {
                let g = DistSpec::gamma(shape, 1.0)?;
                Ok((g.quantile(p2)? / g.quantile(p1)?).ln())
            };
            let (mut lo, mut hi) = (1.0f64, 1.0f64);
            while log_ratio(lo)? < target {
                lo /= 2.0;
                if lo < 1e-6 {
                    return Err(Error::NoSolution("quantile ratio too wide for a Gamma".into()));
                }
            }
            while log_ratio(hi)? > target {
                hi *= 2.0;
                if hi > 1e9 {
                    return Err(Error::NoSolution("quantile ratio too narrow for a Gamma".into()));
                }
            }
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if log_ratio(mid)? > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi / lo - 1.0 < 1e-14 {
                    break;
                }
            }
            let shape = (lo * hi).sqrt();
            let rate = DistSpec::gamma(shape, 1.0)?.quantile(p1)? / v1;
            DistSpec::gamma(shape, rate)
        }
        Family::HalfNormal => {
            let (p, v) = sorted[0];
            let z = normal_quantile(0.5 + 0.5 * p)?;
            DistSpec::half_normal(v / z)
        }
        Family::Poisson => {
            let (p, v) = sorted[0];
            // Continuous relaxation: the rate whose upper regularized gamma at v equals p.
            let cdf = |rate: f64| gamma_ur(v.floor() + 1.0, rate);
            let (mut lo, mut hi) = (1e-12, v.max(1.0));
            while cdf(hi) > p {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) > p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            DistSpec::new(Family::Poisson, vec![0.5 * (lo + hi)])
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn negbin2_variance_by_simulation() {
        let nb = NegBin2Params::new(10.0, 5.0).unwrap();
        assert_eq!(nb.variance(), 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| nb.sample(&mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 10.0).abs() < 0.05, "mean {mean}");
        assert!((var - 30.0).abs() < 0.5, "variance {var}");
    }

    #[test]
    fn negbin2_poisson_limit() {
        for y in 0..=20u64 {
            let nb = negbin2_logpmf(y, 4.0, 1e8).unwrap();
            let po = poisson_logpmf(y, 4.0).unwrap();
            assert!((nb - po).abs() < 1e-4, "y={y}: {nb} vs {po}");
        }
    }

    #[test]
    fn negbin2_normalizes() {
        let total: f64 = (0..=10_000u64)
            .map(|y| negbin2_logpmf(y, 10.0, 5.0).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn negbin2_domain() {
        assert!(negbin2_logpmf(1, 0.0, 1.0).is_err());
        assert!(negbin2_logpmf(1, 1.0, -1.0).is_err());
    }

    #[test]
    fn negbin2_concave_near_mode() {
        for &(mu, phi) in &[(5.0, 2.0), (40.0, 10.0), (300.0, 50.0)] {
            let mode = mu as u64;
            let lo = mode.saturating_sub(3).max(1);
            for y in lo..mode + 3 {
                let f = |k: u64| negbin2_logpmf(k, mu, phi).unwrap();
                assert!(f(y + 1) - 2.0 * f(y) + f(y - 1) < 0.0, "mu={mu} y={y}");
            }
        }
    }

    #[test]
    fn negbin2_cdf_matches_pmf_sum() {
        let spec = DistSpec::new(Family::NegBin2, vec![12.0, 3.0]).unwrap();
        let mut acc = 0.0;
        for y in 0..60u64 {
            acc += negbin2_logpmf(y, 12.0, 3.0).unwrap().exp();
            assert!((spec.cdf(y as f64).unwrap() - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn logit_pair() {
        assert_eq!(inv_logit(0.0), 0.5);
        assert!((logit(0.12).unwrap() - (0.12f64 / 0.88).ln()).abs() < 1e-15);
        assert!((logit(0.12).unwrap() + 1.9924).abs() < 1e-4);
        assert!((inv_logit(logit(0.999).unwrap()) - 0.999).abs() < 1e-12);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!((log_inv_logit(-800.0) + 800.0).abs() < 1e-12);
    }

    #[test]
    fn normal_quartiles_from_elicitation() {
        let spec = DistSpec::normal(494.0, 163.0).unwrap();
        let q: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p| spec.quantile(p).unwrap()).collect();
        for (got, want) in q.iter().zip([384.0, 494.0, 604.0]) {
            assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        }
        assert!(DistSpec::normal(0.0, 1.0).unwrap().quantile(0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let specs = [
            DistSpec::normal(3.0, 2.0).unwrap(),
            DistSpec::lognormal(1.0, 0.7).unwrap(),
            DistSpec::gamma(278.0, 46.0).unwrap(),
            DistSpec::gamma(0.5, 2.0).unwrap(),
            DistSpec::half_normal(2.0).unwrap(),
        ];
        for spec in &specs {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..20 {
                let p = i as f64 / 20.0;
                let x = spec.quantile(p).unwrap();
                assert!(x > prev);
                prev = x;
                assert!((spec.cdf(x).unwrap() - p).abs() < 1e-8, "{spec:?} p={p}");
                let back = spec.quantile(spec.cdf(x).unwrap()).unwrap();
                assert!((back - x).abs() <= 1e-6 * x.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn unsupported_quantiles() {
        let d = DistSpec::new(Family::Dirichlet, vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(d.quantile(0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn discrete_quantiles() {
        let po = DistSpec::new(Family::Poisson, vec![4.0]).unwrap();
        let q = po.quantile(0.5).unwrap();
        assert_eq!(q, 4.0);
        assert!(po.cdf(q - 1.0).unwrap() < 0.5 && po.cdf(q).unwrap() >= 0.5);
    }

    #[test]
    fn lognormal_from_ninety_percent_intervals() {
        // Oracle: mu = (ln a + ln b) / 2, s = (ln b - ln a) / (2 z_0.95).
        let z95 = 1.6448536269514722;
        for &(a, b, mu, s) in &[(1.0f64, 10.0f64, 1.1513, 0.6999), (8.0, 36.0, 2.8315, 0.4572)] {
            let spec = solve_quantile_params(Family::Lognormal, &[(0.05, a), (0.95, b)]).unwrap();
            let oracle_mu = 0.5 * (a.ln() + b.ln());
            let oracle_s = (b.ln() - a.ln()) / (2.0 * z95);
            assert!((spec.params[0] - oracle_mu).abs() < 1e-9);
            assert!((spec.params[1] - oracle_s).abs() < 1e-9);
            assert!((spec.params[0] - mu).abs() < 1e-3);
            assert!((spec.params[1] - s).abs() < 1e-3);
            assert!((spec.quantile(0.05).unwrap() / a - 1.0).abs() < 1e-6);
            assert!((spec.quantile(0.95).unwrap() / b - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gamma_from_ninety_percent_interval() {
        let spec = solve_quantile_params(Family::GammaShapeRate, &[(0.05, 0.3), (0.95, 0.7)]).unwrap();
        assert!((spec.quantile(0.05).unwrap() - 0.3).abs() < 1e-6);
        assert!((spec.quantile(0.95).unwrap() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn solve_rejects_bad_targets() {
        assert!(matches!(
            solve_quantile_params(Family::Lognormal, &[(0.05, 10.0), (0.95, 1.0)]),
            Err(Error::NoSolution(_))
        ));
        assert!(solve_quantile_params(Family::Normal, &[(0.5, 1.0)]).is_err());
        assert!(matches!(
            solve_quantile_params(Family::GammaShapeRate, &[(0.05, -1.0), (0.95, 1.0)]),
            Err(Error::NoSolution(_))
        ));
    }

    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        // Composite Simpson.
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        let cases = [
            DistSpec::normal(2.0, 1.5).unwrap(),
            DistSpec::lognormal(0.5, 0.4).unwrap(),
            DistSpec::gamma(3.0, 2.0).unwrap(),
            DistSpec::half_normal(1.3).unwrap(),
        ];
        for spec in &cases {
            let lo = spec.quantile(1e-10).unwrap();
            let hi = spec.quantile(1.0 - 1e-10).unwrap();
            let lo = if spec.family == Family::HalfNormal { 0.0 } else { lo };
            let mass = integrate(|x| spec.ln_density(x).unwrap().exp(), lo, hi, 20_000);
            assert!((mass - 1.0).abs() < 1e-6, "{spec:?}: {mass}");
        }
        let po = DistSpec::new(Family::Poisson, vec![6.5]).unwrap();
        let mass: f64 = (0..200).map(|k| po.ln_density(k as f64).unwrap().exp()).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dirichlet_multinomial_identity() {
        // ln Dir(p | a) + ln Mult(n | p) - ln Dir(p | a + n) is the marginal for every p.
        let alpha = [0.7, 2.0, 1.3];
        for n0 in 0..=10u64 {
            for n1 in 0..=(10 - n0) {
                for n2 in 0..=(10 - n0 - n1) {
                    let counts = [n0, n1, n2];
                    let post: Vec<f64> = alpha.iter().zip(&counts).map(|(a, &k)| a + k as f64).collect();
                    let marginal = dirichlet_multinomial_ln_pmf(&counts, &alpha).unwrap();
                    for p in [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]] {
                        let lhs = dirichlet_ln_pdf(&alpha, &p).unwrap()
                            + multinomial_ln_pmf(&counts, &p).unwrap()
                            - dirichlet_ln_pdf(&post, &p).unwrap();
                        assert!((lhs - marginal).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn dirichlet_draws_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = sample_dirichlet(&[0.1, 2.0, 5.0], &mut rng).unwrap();
            assert!(d.iter().all(|&x| x >= 0.0));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
