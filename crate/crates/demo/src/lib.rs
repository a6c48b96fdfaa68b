//! Browser demo over the core library: elicitation fits, GP prior paths and
//! NegBin2 pmfs. The plain functions are testable natively; the
//! `wasm_bindgen` wrappers hand results to JavaScript as JSON or arrays.

use novelrates::dist::negbin2_logpmf;
use novelrates::elicit::{achieved_quartiles, fit_gamma_log, fit_normal};
use novelrates::error::{Error, Result};
use novelrates::gp::UnitFactor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const JITTER: f64 = 1e-6;
const MAX_HORIZON: usize = 400;
const MAX_PATHS: usize = 50;
const MAX_COUNT: u32 = 100_000;

/// Both elicitation fits evaluated as densities of the rate on one grid.
#[derive(Debug, Clone, Serialize)]
pub struct ElicitationCurves {
    pub x: Vec<f64>,
    pub normal: Vec<f64>,
    pub gamma_log: Vec<f64>,
    /// (mean, sd)
    pub normal_params: Vec<f64>,
    /// (shape, rate) of the log rate
    pub gamma_params: Vec<f64>,
    pub normal_quartiles: [f64; 3],
    pub gamma_quartiles: [f64; 3],
}

pub fn elicitation_curves(q: [f64; 3], points: usize) -> Result<ElicitationCurves> {
    if points < 2 {
        return Err(Error::Domain(format!("need at least 2 grid points, got {points}")));
    }
    let normal = fit_normal(q)?;
    let gamma = fit_gamma_log(q)?;
    let spread = q[2] - q[0];
    let lo = (q[0] - 1.5 * spread).max(1e-3 * q[1]);
    let hi = q[2] + 1.5 * spread;
    let x: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let mut normal_density = Vec::with_capacity(points);
    let mut gamma_density = Vec::with_capacity(points);
    for &r in &x {
        normal_density.push(normal.ln_density(r)?.exp());
        // Change of variables from the log rate to the rate.
        gamma_density.push(gamma.ln_density(r.ln())?.exp() / r);
    }
    Ok(ElicitationCurves {
        x,
        normal: normal_density,
        gamma_log: gamma_density,
        normal_quartiles: achieved_quartiles(&normal)?,
        gamma_quartiles: achieved_quartiles(&gamma)?,
        normal_params: normal.params,
        gamma_params: gamma.params,
    })
}

/// Draws of `intercept + slope * t + sigma * (L z)[t]` for t = 1..=horizon.
pub fn gp_prior_paths(
    horizon: usize,
    intercept: f64,
    slope: f64,
    sigma: f64,
    lengthscale: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 || horizon > MAX_HORIZON || paths == 0 || paths > MAX_PATHS {
        return Err(Error::Domain(format!(
            "horizon must be in 1..={MAX_HORIZON} and paths in 1..={MAX_PATHS}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let factor = UnitFactor::new(horizon, lengthscale, JITTER)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..paths)
        .map(|_| {
            let z: Vec<f64> = (0..horizon).map(|_| StandardNormal.sample(&mut rng)).collect();
            factor
                .deviation(sigma, &z)
                .iter()
                .enumerate()
                .map(|(i, d)| intercept + slope * (i + 1) as f64 + d)
                .collect()
        })
        .collect())
}

/// NegBin2 probabilities for counts 0..=max_count.
pub fn nb2_pmf(mu: f64, phi: f64, max_count: u32) -> Result<Vec<f64>> {
    if max_count > MAX_COUNT {
        return Err(Error::Domain(format!("max_count must be at most {MAX_COUNT}")));
    }
    (0..=u64::from(max_count))
        .map(|y| negbin2_logpmf(y, mu, phi).map(f64::exp))
        .collect()
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Elicitation curves as JSON.
#[wasm_bindgen(js_name = elicitationCurves)]
pub fn elicitation_curves_js(q25: f64, q50: f64, q75: f64, points: usize) -> std::result::Result<String, JsError> {
    let curves = elicitation_curves([q25, q50, q75], points).map_err(js)?;
    serde_json::to_string(&curves).map_err(js)
}

/// Prior paths as a JSON array of arrays.
#[wasm_bindgen(js_name = gpPriorPaths)]
#[allow(clippy::too_many_arguments)]
pub fn gp_prior_paths_js(
    horizon: usize,
    intercept: f64,
    slope: f64,
    sigma: f64,
    lengthscale: f64,
    paths: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    let p = gp_prior_paths(horizon, intercept, slope, sigma, lengthscale, paths, u64::from(seed)).map_err(js)?;
    serde_json::to_string(&p).map_err(js)
}

#[wasm_bindgen(js_name = nb2Pmf)]
pub fn nb2_pmf_js(mu: f64, phi: f64, max_count: u32) -> std::result::Result<Vec<f64>, JsError> {
    nb2_pmf(mu, phi, max_count).map_err(js)
}
