//! Joint log-density of the production model and its exact gradient.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use super::{GpKind, Layout, ModelConfig, ModelParams};
use crate::dist::{inv_logit, ln_density_with_derivative, log_inv_logit, negbin2_logpmf_log_mu, softplus, DistSpec};
use crate::error::{Error, Result};
use crate::gp::UnitFactor;
use crate::gradient::DifferentiableScalarField;
use crate::ingest::{AlignedDataset, GenderObservation, Observation};

/// The joint log-density split into independently testable blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LogJointBlocks {
    /// Standard-normal priors on the whitened innovations.
    pub innovations: f64,
    /// Priors on intercepts, slopes, kernel parameters, multipliers and dispersions.
    pub hyperpriors: f64,
    /// Log-Jacobians of the unconstrained transforms.
    pub jacobian: f64,
    pub rfgs_total: f64,
    pub rfgs_gender: f64,
    pub pc: f64,
    pub loced: f64,
    pub athenaeum: f64,
    pub athenaeum_gender: f64,
    pub elicited: f64,
    /// Number of likelihood and elicited-prior terms.
    pub term_count: usize,
}

impl LogJointBlocks {
    pub fn prior(&self) -> f64 {
        self.innovations + self.hyperpriors + self.jacobian
    }

    pub fn likelihood(&self) -> f64 {
        self.rfgs_total + self.rfgs_gender + self.pc + self.loced + self.athenaeum + self.athenaeum_gender
    }

    pub fn total(&self) -> f64 {
        self.prior() + self.likelihood() + self.elicited
    }
}

/// The production model bound to one aligned dataset.
#[derive(Debug, Clone)]
pub struct ProductionModel {
    config: ModelConfig,
    data: AlignedDataset,
    layout: Layout,
    lengthscale_priors: [DistSpec; 4],
    pi_a_prior: DistSpec,
    needs_path: [bool; 4],
}

fn used<T>(switch: bool, obs: &Option<Vec<T>>) -> Option<&[T]> {
    match obs {
        Some(v) if switch && !v.is_empty() => Some(v),
        _ => None,
    }
}

struct Decoded<'a> {
    intercept_sd: f64,
    slope_sd: f64,
    sigma: f64,
    lengthscale: f64,
    z: &'a [f64],
    path: Vec<f64>,
    factor: Option<Arc<UnitFactor>>,
}

/// Accumulates a NegBin2 term's derivative with respect to its log-mean.
struct Accum {
    adj: [Vec<f64>; 4],
    d_log_pi_nu: f64,
    d_log_pi_a: f64,
    d_phi: Vec<f64>,
}

const LAMBDA: usize = 0;
const NU: usize = 1;
const RHO: usize = 2;
const MEN: usize = 3;

impl ProductionModel {
    pub fn new(config: ModelConfig, data: AlignedDataset) -> Result<Self> {
        config.validate()?;
        if data.horizon != config.horizon {
            return Err(Error::Config(format!(
                "dataset horizon {} differs from model horizon {}",
                data.horizon, config.horizon
            )));
        }
        let lengthscale_priors = [
            config.priors.lambda.lengthscale.solve()?,
            config.priors.nu.lengthscale.solve()?,
            config.priors.rho.lengthscale.solve()?,
            config.priors.men.lengthscale.solve()?,
        ];
        let pi_a_prior = config.priors.pi_a.solve()?;
        let s = config.sources;
        let proportion = used(s.pc, &data.pc).is_some() || used(s.loced, &data.loced).is_some();
        let gender = used(s.rfgs_gender, &data.rfgs_gender).is_some()
            || used(s.athenaeum_gender, &data.athenaeum_gender).is_some();
        let any = proportion
            || gender
            || used(s.rfgs_total, &data.rfgs_total).is_some()
            || used(s.athenaeum, &data.athenaeum).is_some()
            || (s.elicited && !data.elicited.is_empty());
        Ok(Self {
            layout: Layout::new(&config),
            config,
            data,
            lengthscale_priors,
            pi_a_prior,
            needs_path: [any, proportion, gender, gender],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn data(&self) -> &AlignedDataset {
        &self.data
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn to_params(&self, x: &[f64]) -> Result<ModelParams> {
        self.layout.to_params(&self.config, x)
    }

    pub fn to_unconstrained(&self, params: &ModelParams) -> Result<Vec<f64>> {
        self.layout.to_unconstrained(&self.config, params)
    }

    /// Blocks of the joint log-density at natural-scale parameters.
    pub fn blocks(&self, params: &ModelParams) -> Result<LogJointBlocks> {
        self.blocks_at(&self.to_unconstrained(params)?)
    }

    pub fn log_joint(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.blocks(params)?.total())
    }

    /// Blocks of the joint log-density at an unconstrained point.
    pub fn blocks_at(&self, x: &[f64]) -> Result<LogJointBlocks> {
        self.eval(x, None)
    }

    fn decode<'a>(&self, x: &'a [f64]) -> Result<Vec<Decoded<'a>>> {
        let t_len = self.layout.horizon;
        GpKind::ALL
            .iter()
            .map(|&kind| {
                let o = self.layout.gp_offset(kind);
                let pr = self.config.gp_priors(kind);
                let (a, b) = (
                    pr.intercept.params[0] + pr.intercept.params[1] * x[o],
                    pr.slope.params[0] + pr.slope.params[1] * x[o + 1],
                );
                let (sigma, lengthscale) = (x[o + 2].exp(), x[o + 3].exp());
                let z = &x[o + 4..o + 4 + t_len];
                let (path, factor) = if self.needs_path[kind.index()] {
                    if !(sigma > 0.0 && sigma.is_finite() && lengthscale > 0.0 && lengthscale.is_finite()) {
                        return Err(Error::NonFiniteValue(format!("{} kernel parameters", kind.name())));
                    }
                    let factor = UnitFactor::shared(t_len, lengthscale, self.config.jitter)
                        .map_err(|e| Error::NonFiniteValue(format!("{} factor: {e}", kind.name())))?;
                    let dev = factor.deviation(sigma, z);
                    let path = dev
                        .iter()
                        .enumerate()
                        .map(|(i, d)| a + b * (i + 1) as f64 + d)
                        .collect();
                    (path, Some(factor))
                } else {
                    (Vec::new(), None)
                };
                Ok(Decoded {
                    intercept_sd: pr.intercept.params[1],
                    slope_sd: pr.slope.params[1],
                    sigma,
                    lengthscale,
                    z,
                    path,
                    factor,
                })
            })
            .collect()
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<LogJointBlocks> {
        self.layout.check(x)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("input coordinate {i}")));
        }
        let t_len = self.layout.horizon;
        let gps = self.decode(x)?;
        let slots = self.layout.dispersion_slots();
        let phi: Vec<f64> = slots.iter().map(|&s| x[s].exp()).collect();
        // ln(pi_nu) = ln(1 + e^u)
        let log_pi_nu = softplus(x[self.layout.pi_nu()]);
        let log_pi_a = log_inv_logit(x[self.layout.pi_a()]);

        let mut b = LogJointBlocks::default();
        let mut acc = Accum {
            adj: std::array::from_fn(|_| vec![0.0; t_len]),
            d_log_pi_nu: 0.0,
            d_log_pi_a: 0.0,
            d_phi: vec![0.0; 5],
        };
        let lam = &gps[LAMBDA].path;
        let nu = &gps[NU].path;
        let s = self.config.sources;
        let d = &self.data;

        if let Some(obs) = used(s.rfgs_total, &d.rfgs_total) {
            b.rfgs_total = Self::counts(obs, lam, &mut acc, &mut b.term_count, 0, phi[0], |_| (0.0, 0.0, 0.0));
        }
        // PC mean: exp(lambda) / inv_logit(nu).
        let pc_offset = |i: usize| (-log_inv_logit(nu[i]), -inv_logit(-nu[i]), 0.0);
        if let Some(obs) = used(s.pc, &d.pc) {
            b.pc = Self::counts(obs, lam, &mut acc, &mut b.term_count, 1, phi[1], pc_offset);
        }
        if let Some(obs) = used(s.loced, &d.loced) {
            b.loced = Self::counts(obs, lam, &mut acc, &mut b.term_count, 2, phi[2], |i| {
                let (off, dnu, _) = pc_offset(i);
                (off + log_pi_nu, dnu, 1.0)
            });
        }
        if let Some(obs) = used(s.athenaeum, &d.athenaeum) {
            b.athenaeum = Self::counts(obs, lam, &mut acc, &mut b.term_count, 3, phi[3], |_| (log_pi_a, 0.0, 1.0));
        }
        if let Some(obs) = used(s.rfgs_gender, &d.rfgs_gender) {
            b.rfgs_gender = self.gender(obs, &gps, &mut acc, &mut b.term_count, phi[4], None);
        }
        if let Some(obs) = used(s.athenaeum_gender, &d.athenaeum_gender) {
            b.athenaeum_gender = self.gender(obs, &gps, &mut acc, &mut b.term_count, phi[4], Some(log_pi_a));
        }
        if s.elicited {
            for anchored in &d.elicited {
                let i = anchored.t - 1;
                let spec = &anchored.prior.fitted;
                let (v, dv) = if anchored.prior.is_log_scale() {
                    ln_density_with_derivative(spec, lam[i])
                } else {
                    let r = lam[i].exp();
                    let (v, dv) = ln_density_with_derivative(spec, r);
                    (v, dv * r)
                };
                b.elicited += v;
                acc.adj[LAMBDA][i] += dv;
                b.term_count += 1;
            }
        }

        let mut g = vec![0.0; x.len()];
        for (k, kind) in GpKind::ALL.iter().enumerate() {
            let o = self.layout.gp_offset(*kind);
            let pr = self.config.gp_priors(*kind);
            let dec = &gps[k];
            let a = pr.intercept.params[0] + dec.intercept_sd * x[o];
            let (v, dv) = ln_density_with_derivative(&pr.intercept, a);
            b.hyperpriors += v;
            g[o] += dv * dec.intercept_sd;
            let slope = pr.slope.params[0] + dec.slope_sd * x[o + 1];
            let (v, dv) = ln_density_with_derivative(&pr.slope, slope);
            b.hyperpriors += v;
            g[o + 1] += dv * dec.slope_sd;
            b.jacobian += dec.intercept_sd.ln() + dec.slope_sd.ln();

            let (v, dv) = ln_density_with_derivative(&pr.scale, dec.sigma);
            b.hyperpriors += v;
            g[o + 2] += dv * dec.sigma + 1.0;
            let (v, dv) = ln_density_with_derivative(&self.lengthscale_priors[k], dec.lengthscale);
            b.hyperpriors += v;
            g[o + 3] += dv * dec.lengthscale + 1.0;
            b.jacobian += x[o + 2] + x[o + 3];

            b.innovations -= 0.5 * (t_len as f64) * (2.0 * PI).ln();
            for (j, z) in dec.z.iter().enumerate() {
                b.innovations -= 0.5 * z * z;
                g[o + 4 + j] -= z;
            }
        }

        let u = x[self.layout.pi_nu()];
        let excess = u.exp();
        let (v, dv) = ln_density_with_derivative(&self.config.priors.pi_nu_excess, excess);
        b.hyperpriors += v;
        b.jacobian += u;
        // d ln(pi_nu) / du = excess / pi_nu
        g[self.layout.pi_nu()] += dv * excess + 1.0 + acc.d_log_pi_nu * excess / (1.0 + excess);

        let u = x[self.layout.pi_a()];
        let (pi_a, one_minus) = (inv_logit(u), inv_logit(-u));
        let (v, dv) = ln_density_with_derivative(&self.pi_a_prior, pi_a);
        b.hyperpriors += v;
        b.jacobian += log_inv_logit(u) + log_inv_logit(-u);
        g[self.layout.pi_a()] += dv * pi_a * one_minus + (one_minus - pi_a) + acc.d_log_pi_a * one_minus;

        let mut seen = Vec::with_capacity(5);
        for (j, &slot) in slots.iter().enumerate() {
            g[slot] += acc.d_phi[j] * phi[j];
            if !seen.contains(&slot) {
                seen.push(slot);
                let (v, dv) = ln_density_with_derivative(&self.config.priors.dispersion, phi[j]);
                b.hyperpriors += v;
                b.jacobian += x[slot];
                g[slot] += dv * phi[j] + 1.0;
            }
        }

        let total = b.total();
        if !total.is_finite() {
            return Err(Error::NonFiniteValue(format!("log joint density is {total}")));
        }
        if let Some(out) = grad {
            for (k, kind) in GpKind::ALL.iter().enumerate() {
                let Some(factor) = &gps[k].factor else { continue };
                let adj = &acc.adj[k];
                let o = self.layout.gp_offset(*kind);
                let dec = &gps[k];
                g[o] += dec.intercept_sd * adj.iter().sum::<f64>();
                g[o + 1] += dec.slope_sd * adj.iter().enumerate().map(|(i, a)| a * (i + 1) as f64).sum::<f64>();
                let (gz, d_log_sigma, d_log_l) = factor.backprop(dec.sigma, dec.z, adj);
                g[o + 2] += d_log_sigma;
                g[o + 3] += d_log_l;
                for (j, v) in gz.iter().enumerate() {
                    g[o + 4 + j] += v;
                }
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("gradient coordinate {i}")));
            }
            out.copy_from_slice(&g);
        }
        Ok(b)
    }

    /// NegBin2 terms with log-mean `lambda + offset`, where `offset(i)`
    /// returns the offset, its derivative in `nu`, and the weight of the
    /// multiplier term.
    fn counts(
        obs: &[Observation],
        lam: &[f64],
        acc: &mut Accum,
        terms: &mut usize,
        phi_index: usize,
        phi: f64,
        offset: impl Fn(usize) -> (f64, f64, f64),
    ) -> f64 {
        let mut total = 0.0;
        for o in obs {
            let i = o.t - 1;
            let (off, d_nu, d_mult) = offset(i);
            let e = negbin2_logpmf_log_mu(o.count, lam[i] + off, phi);
            total += e.value;
            acc.adj[LAMBDA][i] += e.d_log_mu;
            acc.adj[NU][i] += e.d_log_mu * d_nu;
            match phi_index {
                2 => acc.d_log_pi_nu += e.d_log_mu * d_mult,
                3 => acc.d_log_pi_a += e.d_log_mu * d_mult,
                _ => {}
            }
            acc.d_phi[phi_index] += e.d_phi;
            *terms += 1;
        }
        total
    }

    fn gender(
        &self,
        obs: &[GenderObservation],
        gps: &[Decoded],
        acc: &mut Accum,
        terms: &mut usize,
        phi: f64,
        log_pi_a: Option<f64>,
    ) -> f64 {
        let mut total = 0.0;
        for o in obs {
            let i = o.t - 1;
            let (lam, r, m) = (gps[LAMBDA].path[i], gps[RHO].path[i], gps[MEN].path[i]);
            let (rho, men) = (inv_logit(r), inv_logit(m));
            let base = lam + log_pi_a.unwrap_or(0.0) + log_inv_logit(-r);
            // (count, log mean, d/d rho-path, d/d men-path)
            let cells = [
                (o.men, base + log_inv_logit(m), -rho, 1.0 - men),
                (o.women, base + log_inv_logit(-m), -rho, -men),
                (o.unknown, lam + log_pi_a.unwrap_or(0.0) + log_inv_logit(r), 1.0 - rho, 0.0),
            ];
            for (y, log_mu, d_rho, d_men) in cells {
                let e = negbin2_logpmf_log_mu(y, log_mu, phi);
                total += e.value;
                acc.adj[LAMBDA][i] += e.d_log_mu;
                acc.adj[RHO][i] += e.d_log_mu * d_rho;
                acc.adj[MEN][i] += e.d_log_mu * d_men;
                if log_pi_a.is_some() {
                    acc.d_log_pi_a += e.d_log_mu;
                }
                acc.d_phi[4] += e.d_phi;
                *terms += 1;
            }
        }
        total
    }
}

impl DifferentiableScalarField for ProductionModel {
    fn dimension(&self) -> usize {
        self.layout.dimension()
    }

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; x.len()];
        let b = self.eval(x, Some(&mut g))?;
        Ok((b.total(), g))
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x, None)?.total())
    }
}
