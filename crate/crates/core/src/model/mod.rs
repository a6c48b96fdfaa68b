//! The five-source production model: configuration, parameters and the
//! mapping between natural and unconstrained coordinates.
//!
//! Each of the four latent processes (novel log-rate, PC novel-share
//! log-odds, unknown-gender log-odds, men-share-of-known log-odds) is a
//! [`LatentGP`] over t = 1..T. The unconstrained vector stores, per process,
//! `[intercept, slope, ln sigma, ln lengthscale, z_1..z_T]`, followed by
//! `ln(pi_nu - 1)`, `logit(pi_a)` and the log dispersions. Intercept and
//! slope are stored standardized by their Normal prior.

mod density;
mod simulate;
#[cfg(test)]
pub(crate) mod fixtures;

use serde::{Deserialize, Serialize};

use crate::dist::{inv_logit, logit, solve_quantile_params, DistSpec, Family};
use crate::error::{Error, Result};
use crate::gp::{LatentGP, SEKernel};
use crate::ingest::DEFAULT_HORIZON;

pub use density::{LogJointBlocks, ProductionModel};
pub use simulate::{simulate, DataShape};

/// A prior given by the central interval it should put `mass` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalPrior {
    pub family: Family,
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
}

fn default_mass() -> f64 {
    0.9
}

impl IntervalPrior {
    pub fn new(family: Family, lower: f64, upper: f64) -> Self {
        Self {
            family,
            lower,
            upper,
            mass: 0.9,
        }
    }

    pub fn solve(&self) -> Result<DistSpec> {
        if !(self.mass > 0.0 && self.mass < 1.0) {
            return Err(Error::Config(format!("interval mass must be in (0,1), got {}", self.mass)));
        }
        let tail = (1.0 - self.mass) / 2.0;
        solve_quantile_params(self.family, &[(tail, self.lower), (1.0 - tail, self.upper)])
    }
}

/// Priors of one latent process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpPriors {
    /// Normal prior on the trend intercept.
    pub intercept: DistSpec,
    /// Normal prior on the trend slope (per year).
    pub slope: DistSpec,
    /// Prior on the kernel scale.
    pub scale: DistSpec,
    pub lengthscale: IntervalPrior,
}

impl GpPriors {
    fn new(intercept: (f64, f64), slope_sd: f64, lengthscale: (f64, f64)) -> Self {
        Self {
            intercept: DistSpec {
                family: Family::Normal,
                params: vec![intercept.0, intercept.1],
            },
            slope: DistSpec {
                family: Family::Normal,
                params: vec![0.0, slope_sd],
            },
            scale: DistSpec {
                family: Family::HalfNormal,
                params: vec![1.0],
            },
            lengthscale: IntervalPrior::new(Family::Lognormal, lengthscale.0, lengthscale.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub lambda: GpPriors,
    pub nu: GpPriors,
    pub rho: GpPriors,
    pub men: GpPriors,
    /// Prior on `pi_nu - 1`.
    pub pi_nu_excess: DistSpec,
    pub pi_a: IntervalPrior,
    pub dispersion: DistSpec,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lambda: GpPriors::new((5.0, 5.0), 0.1, (1.0, 10.0)),
            nu: GpPriors::new((-2.0, 2.0), 0.05, (8.0, 36.0)),
            rho: GpPriors::new((-1.5, 2.0), 0.05, (8.0, 36.0)),
            men: GpPriors::new((0.0, 2.0), 0.05, (8.0, 36.0)),
            pi_nu_excess: DistSpec {
                family: Family::HalfNormal,
                params: vec![2.0],
            },
            pi_a: IntervalPrior::new(Family::GammaShapeRate, 0.3, 0.7),
            dispersion: DistSpec {
                family: Family::GammaShapeRate,
                params: vec![2.0, 0.1],
            },
        }
    }
}

/// Which aligned sources enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSwitches {
    pub rfgs_total: bool,
    pub rfgs_gender: bool,
    pub loced: bool,
    pub pc: bool,
    pub athenaeum: bool,
    pub athenaeum_gender: bool,
    pub elicited: bool,
}

impl Default for SourceSwitches {
    fn default() -> Self {
        Self {
            rfgs_total: true,
            rfgs_gender: true,
            loced: true,
            pc: true,
            athenaeum: true,
            athenaeum_gender: true,
            elicited: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub horizon: usize,
    /// Diagonal jitter, relative to the kernel variance.
    pub jitter: f64,
    /// One dispersion for all four count series instead of one each.
    pub shared_count_dispersion: bool,
    pub sources: SourceSwitches,
    pub priors: PriorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            jitter: crate::gp::DEFAULT_JITTER,
            shared_count_dispersion: false,
            sources: SourceSwitches::default(),
            priors: PriorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_horizon(horizon: usize) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter must be positive, got {}", self.jitter)));
        }
        for (name, gp) in GpKind::ALL.iter().map(|k| (k.name(), self.gp_priors(*k))) {
            for (what, spec) in [("intercept", &gp.intercept), ("slope", &gp.slope)] {
                if spec.family != Family::Normal {
                    return Err(Error::Config(format!("{name} {what} prior must be Normal")));
                }
                spec.validate()?;
            }
            check_positive_prior(&format!("{name} scale"), &gp.scale)?;
            check_positive_prior(&format!("{name} lengthscale"), &gp.lengthscale.solve()?)?;
        }
        check_positive_prior("pi_nu excess", &self.priors.pi_nu_excess)?;
        check_positive_prior("pi_a", &self.priors.pi_a.solve()?)?;
        check_positive_prior("dispersion", &self.priors.dispersion)?;
        Ok(())
    }

    pub fn gp_priors(&self, kind: GpKind) -> &GpPriors {
        match kind {
            GpKind::Lambda => &self.priors.lambda,
            GpKind::Nu => &self.priors.nu,
            GpKind::Rho => &self.priors.rho,
            GpKind::Men => &self.priors.men,
        }
    }
}

fn check_positive_prior(name: &str, spec: &DistSpec) -> Result<()> {
    spec.validate()?;
    match spec.family {
        Family::HalfNormal | Family::Lognormal | Family::GammaShapeRate => Ok(()),
        other => Err(Error::Config(format!(
            "{name} prior must be HalfNormal, Lognormal or GammaShapeRate, got {}",
            other.name()
        ))),
    }
}

/// The four latent processes, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GpKind {
    Lambda,
    Nu,
    Rho,
    Men,
}

impl GpKind {
    pub const ALL: [GpKind; 4] = [GpKind::Lambda, GpKind::Nu, GpKind::Rho, GpKind::Men];

    pub fn name(self) -> &'static str {
        match self {
            GpKind::Lambda => "lambda",
            GpKind::Nu => "nu",
            GpKind::Rho => "rho",
            GpKind::Men => "men",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Dispersions of the five observation families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersions {
    pub phi_y: f64,
    pub phi_pc: f64,
    pub phi_loced: f64,
    pub phi_ath: f64,
    pub phi_g: f64,
}

impl Dispersions {
    pub fn uniform(phi: f64) -> Self {
        Self {
            phi_y: phi,
            phi_pc: phi,
            phi_loced: phi,
            phi_ath: phi,
            phi_g: phi,
        }
    }
}

/// All model parameters on their natural scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda_gp: LatentGP,
    pub nu_gp: LatentGP,
    pub rho_gp: LatentGP,
    /// Men share of known-gender titles, on the log-odds scale.
    pub men_gp: LatentGP,
    pub pi_nu: f64,
    pub pi_a: f64,
    pub dispersions: Dispersions,
}

impl ModelParams {
    pub fn gp(&self, kind: GpKind) -> &LatentGP {
        match kind {
            GpKind::Lambda => &self.lambda_gp,
            GpKind::Nu => &self.nu_gp,
            GpKind::Rho => &self.rho_gp,
            GpKind::Men => &self.men_gp,
        }
    }

    pub fn gp_mut(&mut self, kind: GpKind) -> &mut LatentGP {
        match kind {
            GpKind::Lambda => &mut self.lambda_gp,
            GpKind::Nu => &mut self.nu_gp,
            GpKind::Rho => &mut self.rho_gp,
            GpKind::Men => &mut self.men_gp,
        }
    }

    pub fn horizon(&self) -> usize {
        self.lambda_gp.whitened.len()
    }

    /// Zero-innovation parameters with the given trend on every process.
    pub fn flat(horizon: usize, trends: [(f64, f64); 4], kernel: SEKernel) -> Self {
        let gp = |(a, b): (f64, f64)| LatentGP {
            mean_intercept: a,
            mean_slope: b,
            kernel,
            whitened: vec![0.0; horizon],
        };
        Self {
            lambda_gp: gp(trends[0]),
            nu_gp: gp(trends[1]),
            rho_gp: gp(trends[2]),
            men_gp: gp(trends[3]),
            pi_nu: 1.5,
            pi_a: 0.5,
            dispersions: Dispersions::uniform(20.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        for kind in GpKind::ALL {
            let gp = self.gp(kind);
            if gp.whitened.len() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    actual: gp.whitened.len(),
                });
            }
            let finite = gp.mean_intercept.is_finite()
                && gp.mean_slope.is_finite()
                && gp.whitened.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFiniteValue(format!("{} process", kind.name())));
            }
            SEKernel::new(gp.kernel.sigma, gp.kernel.lengthscale)?;
        }
        if !(self.pi_nu >= 1.0 && self.pi_nu.is_finite()) {
            return Err(Error::Domain(format!("pi_nu must be at least 1, got {}", self.pi_nu)));
        }
        if !(self.pi_a > 0.0 && self.pi_a < 1.0) {
            return Err(Error::Domain(format!("pi_a must be in (0,1), got {}", self.pi_a)));
        }
        let d = &self.dispersions;
        for phi in [d.phi_y, d.phi_pc, d.phi_loced, d.phi_ath, d.phi_g] {
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(Error::Domain(format!("dispersion must be positive, got {phi}")));
            }
        }
        Ok(())
    }
}

/// Positions of every block inside the unconstrained vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub shared_count_dispersion: bool,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            horizon: config.horizon,
            shared_count_dispersion: config.shared_count_dispersion,
        }
    }

    pub fn gp_offset(&self, kind: GpKind) -> usize {
        kind.index() * (self.horizon + 4)
    }

    pub fn pi_nu(&self) -> usize {
        4 * (self.horizon + 4)
    }

    pub fn pi_a(&self) -> usize {
        self.pi_nu() + 1
    }

    pub fn dispersion_count(&self) -> usize {
        if self.shared_count_dispersion {
            2
        } else {
            5
        }
    }

    /// Slots of `(phi_y, phi_pc, phi_loced, phi_ath, phi_g)`.
    pub fn dispersion_slots(&self) -> [usize; 5] {
        let base = self.pi_a() + 1;
        if self.shared_count_dispersion {
            [base, base, base, base, base + 1]
        } else {
            [base, base + 1, base + 2, base + 3, base + 4]
        }
    }

    pub fn dimension(&self) -> usize {
        self.pi_a() + 1 + self.dispersion_count()
    }

    /// Names of the unconstrained coordinates.
    pub fn unconstrained_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dimension());
        for kind in GpKind::ALL {
            let g = kind.name();
            names.push(format!("{g}_intercept_std"));
            names.push(format!("{g}_slope_std"));
            names.push(format!("log_sigma_{g}"));
            names.push(format!("log_lengthscale_{g}"));
            names.extend((1..=self.horizon).map(|t| format!("z_{g}[{t}]")));
        }
        names.push("log_pi_nu_minus_1".into());
        names.push("logit_pi_a".into());
        names.extend(self.dispersion_names().iter().map(|n| format!("log_{n}")));
        names
    }

    fn dispersion_names(&self) -> Vec<&'static str> {
        if self.shared_count_dispersion {
            vec!["phi_count", "phi_g"]
        } else {
            vec!["phi_y", "phi_pc", "phi_loced", "phi_ath", "phi_g"]
        }
    }

    /// Names of the natural-scale parameters, in [`Layout::natural`] order.
    pub fn natural_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dimension());
        for kind in GpKind::ALL {
            let g = kind.name();
            names.push(format!("alpha_{g}"));
            names.push(format!("beta_{g}"));
            names.push(format!("sigma_{g}"));
            names.push(format!("lengthscale_{g}"));
            names.extend((1..=self.horizon).map(|t| format!("z_{g}[{t}]")));
        }
        names.push("pi_nu".into());
        names.push("pi_a".into());
        names.extend(self.dispersion_names().iter().map(|n| n.to_string()));
        names
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Natural-scale values of every coordinate of `x`.
    pub fn natural(&self, config: &ModelConfig, x: &[f64]) -> Result<Vec<f64>> {
        let params = self.to_params(config, x)?;
        Ok(self.natural_of(&params))
    }

    pub fn natural_of(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dimension());
        for kind in GpKind::ALL {
            let gp = params.gp(kind);
            out.extend([gp.mean_intercept, gp.mean_slope, gp.kernel.sigma, gp.kernel.lengthscale]);
            out.extend_from_slice(&gp.whitened);
        }
        out.push(params.pi_nu);
        out.push(params.pi_a);
        let d = &params.dispersions;
        if self.shared_count_dispersion {
            out.extend([d.phi_y, d.phi_g]);
        } else {
            out.extend([d.phi_y, d.phi_pc, d.phi_loced, d.phi_ath, d.phi_g]);
        }
        out
    }

    /// Inverse of [`Layout::natural_of`].
    pub fn params_from_natural(&self, v: &[f64]) -> Result<ModelParams> {
        self.check(v)?;
        let t = self.horizon;
        let gp = |kind: GpKind| -> Result<LatentGP> {
            let o = self.gp_offset(kind);
            Ok(LatentGP {
                mean_intercept: v[o],
                mean_slope: v[o + 1],
                kernel: SEKernel::new(v[o + 2], v[o + 3])?,
                whitened: v[o + 4..o + 4 + t].to_vec(),
            })
        };
        let slots = self.dispersion_slots();
        let params = ModelParams {
            lambda_gp: gp(GpKind::Lambda)?,
            nu_gp: gp(GpKind::Nu)?,
            rho_gp: gp(GpKind::Rho)?,
            men_gp: gp(GpKind::Men)?,
            pi_nu: v[self.pi_nu()],
            pi_a: v[self.pi_a()],
            dispersions: Dispersions {
                phi_y: v[slots[0]],
                phi_pc: v[slots[1]],
                phi_loced: v[slots[2]],
                phi_ath: v[slots[3]],
                phi_g: v[slots[4]],
            },
        };
        params.validate()?;
        Ok(params)
    }

    /// Map an unconstrained vector to natural-scale parameters.
    pub fn to_params(&self, config: &ModelConfig, x: &[f64]) -> Result<ModelParams> {
        self.check(x)?;
        let mut v = x.to_vec();
        for kind in GpKind::ALL {
            let o = self.gp_offset(kind);
            let pr = config.gp_priors(kind);
            v[o] = pr.intercept.params[0] + pr.intercept.params[1] * x[o];
            v[o + 1] = pr.slope.params[0] + pr.slope.params[1] * x[o + 1];
            v[o + 2] = x[o + 2].exp();
            v[o + 3] = x[o + 3].exp();
        }
        v[self.pi_nu()] = 1.0 + x[self.pi_nu()].exp();
        v[self.pi_a()] = inv_logit(x[self.pi_a()]);
        for slot in self.pi_a() + 1..self.dimension() {
            v[slot] = x[slot].exp();
        }
        self.params_from_natural(&v)
    }

    /// Map natural-scale parameters to the unconstrained vector.
    pub fn to_unconstrained(&self, config: &ModelConfig, params: &ModelParams) -> Result<Vec<f64>> {
        params.validate()?;
        if params.horizon() != self.horizon {
            return Err(Error::DimensionMismatch {
                expected: self.horizon,
                actual: params.horizon(),
            });
        }
        let mut x = self.natural_of(params);
        for kind in GpKind::ALL {
            let o = self.gp_offset(kind);
            let pr = config.gp_priors(kind);
            x[o] = (x[o] - pr.intercept.params[0]) / pr.intercept.params[1];
            x[o + 1] = (x[o + 1] - pr.slope.params[0]) / pr.slope.params[1];
            x[o + 2] = x[o + 2].ln();
            x[o + 3] = x[o + 3].ln();
        }
        if params.pi_nu == 1.0 {
            return Err(Error::Domain("pi_nu = 1 lies on the boundary of the sampled space".into()));
        }
        x[self.pi_nu()] = (params.pi_nu - 1.0).ln();
        x[self.pi_a()] = logit(params.pi_a)?;
        let first = self.pi_a() + 1;
        x[first..].iter_mut().for_each(|v| *v = v.ln());
        Ok(x)
    }
}

/// Rates implied by a parameter set, per time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRates {
    pub novel_rate: Vec<f64>,
    pub pc_rate: Vec<f64>,
    pub loced_rate: Vec<f64>,
    pub ath_rate: Vec<f64>,
    pub prop_unknown: Vec<f64>,
    pub prop_men_known: Vec<f64>,
}

impl DerivedRates {
    /// `(men, women, unknown)` rates at 1-based `t`; they sum to the novel rate.
    pub fn gender_category_rates(&self, t: usize) -> (f64, f64, f64) {
        gender_split(
            self.novel_rate[t - 1],
            self.prop_unknown[t - 1],
            self.prop_men_known[t - 1],
        )
    }
}

/// Split a total rate by unknown share `rho` and men-of-known share `sigma`.
///
/// Women take the remainder, so the three parts sum to `rate`.
pub fn gender_split(rate: f64, rho: f64, sigma: f64) -> (f64, f64, f64) {
    let unknown = rate * rho;
    let known = rate - unknown;
    let men = known * sigma;
    (men, known - men, unknown)
}

/// Realized paths `(lambda, nu, rho, men)` of all four processes.
pub fn realize_paths(params: &ModelParams, jitter: f64) -> Result<[Vec<f64>; 4]> {
    let horizon = params.horizon();
    let mut paths: [Vec<f64>; 4] = Default::default();
    for kind in GpKind::ALL {
        let gp = params.gp(kind);
        let factor = crate::gp::UnitFactor::shared(horizon, gp.kernel.lengthscale, jitter)?;
        let dev = factor.deviation(gp.kernel.sigma, &gp.whitened);
        paths[kind.index()] = dev.iter().enumerate().map(|(i, d)| gp.trend(i + 1) + d).collect();
    }
    Ok(paths)
}

pub fn derive_rates(params: &ModelParams, jitter: f64) -> Result<DerivedRates> {
    params.validate()?;
    let [lambda, nu, rho, men] = realize_paths(params, jitter)?;
    Ok(rates_from_paths(params, &lambda, &nu, &rho, &men))
}

fn rates_from_paths(params: &ModelParams, lambda: &[f64], nu: &[f64], rho: &[f64], men: &[f64]) -> DerivedRates {
    let novel_rate: Vec<f64> = lambda.iter().map(|l| l.exp()).collect();
    let pc_rate: Vec<f64> = novel_rate
        .iter()
        .zip(nu)
        .map(|(r, n)| r / inv_logit(*n))
        .collect();
    DerivedRates {
        loced_rate: pc_rate.iter().map(|r| params.pi_nu * r).collect(),
        ath_rate: novel_rate.iter().map(|r| params.pi_a * r).collect(),
        pc_rate,
        novel_rate,
        prop_unknown: rho.iter().map(|v| inv_logit(*v)).collect(),
        prop_men_known: men.iter().map(|v| inv_logit(*v)).collect(),
    }
}

/// `(men, women, unknown)` rates at 1-based `t`.
pub fn gender_category_rates(params: &ModelParams, t: usize, jitter: f64) -> Result<(f64, f64, f64)> {
    if t == 0 || t > params.horizon() {
        return Err(Error::Domain(format!("time index {t} outside 1..={}", params.horizon())));
    }
    Ok(derive_rates(params, jitter)?.gender_category_rates(t))
}
