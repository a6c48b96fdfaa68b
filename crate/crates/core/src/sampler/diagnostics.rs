//! Rank-normalized split R-hat and bulk effective sample size.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::dist::normal_quantile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Parameter names, when known.
    #[serde(default)]
    pub names: Vec<String>,
    /// Infinite (written as null) when every chain is constant but chains differ.
    pub split_rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    /// True where the series is constant and the ESS is a convention.
    pub ess_degenerate: Vec<bool>,
    pub divergent_count: usize,
    pub total_draws: usize,
}

impl Diagnostics {
    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = names;
        self
    }

    pub fn max_rhat(&self) -> f64 {
        self.split_rhat.iter().copied().fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess_bulk.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn divergent_fraction(&self) -> f64 {
        self.divergent_count as f64 / self.total_draws.max(1) as f64
    }
}

/// Split every chain in half, dropping the middle draw of odd-length chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks (average rank for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, x)| (*x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal_quantile((rank - 0.375) / (s + 0.25)).unwrap_or(0.0);
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Classic potential scale reduction of equal-length chains.
fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|v| *v == first)
}

fn check_shape(chains: &[Vec<f64>]) -> Result<()> {
    let n = chains.first().map_or(0, |c| c.len());
    if chains.len() < 2 || n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::TooFewDraws {
            chains: chains.len(),
            iterations: n,
        });
    }
    Ok(())
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_shape(chains)?;
    if is_constant(chains) {
        return Ok(1.0);
    }
    let split = split_chains(chains);
    let bulk = rhat_of(&rank_normalize(&split));
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = rhat_of(&rank_normalize(&folded));
    Ok(bulk.max(tail))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Biased autocovariance at every lag, via FFT.
fn autocovariance(x: &[f64], fft: &Arc<dyn Fft<f64>>, ifft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let n = x.len();
    let len = fft.len();
    let m = mean(x);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    fft.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    buf[..n].iter().map(|c| c.re / (len as f64 * n as f64)).collect()
}

/// Effective sample size of equal-length chains by Geyer's initial
/// monotone sequence on the multi-chain autocorrelation.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &fft, &ifft)).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_var = mean(&acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect::<Vec<_>>());
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho_at = |t: usize| 1.0 - (mean_var - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut t = 1;
    while t + 2 < n.saturating_sub(3) && even + odd > 0.0 {
        even = rho_at(t + 1);
        odd = rho_at(t + 2);
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: ESS of the rank-normalized split chains, capped at the draw count.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<(f64, bool)> {
    check_shape(chains)?;
    let total = chains.iter().map(|c| c.len()).sum::<usize>() as f64;
    if is_constant(chains) {
        return Ok((total, true));
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    if z.iter().all(|c| c.iter().all(|v| *v == c[0])) {
        // Each chain constant: no within-chain information.
        return Ok((1.0, true));
    }
    Ok((ess_of(&z).min(total), false))
}

/// Per-coordinate split R-hat, bulk ESS and divergence count.
pub fn diagnose(draws: &PosteriorDraws) -> Result<Diagnostics> {
    if draws.chains < 2 || draws.iterations < 4 {
        return Err(Error::TooFewDraws {
            chains: draws.chains,
            iterations: draws.iterations,
        });
    }
    use rayon::prelude::*;
    let per: Vec<(f64, (f64, bool))> = (0..draws.dimension)
        .into_par_iter()
        .map(|k| {
            let s = draws.series(k);
            Ok((split_rhat(&s)?, ess_bulk(&s)?))
        })
        .collect::<Result<_>>()?;
    Ok(Diagnostics {
        names: Vec::new(),
        split_rhat: per.iter().map(|p| p.0).collect(),
        ess_bulk: per.iter().map(|p| p.1 .0).collect(),
        ess_degenerate: per.iter().map(|p| p.1 .1).collect(),
        divergent_count: draws.divergent_count(),
        total_draws: draws.total_draws(),
    })
}
