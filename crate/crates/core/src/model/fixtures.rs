//! Shared parameter and dataset builders for model tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{simulate, DataShape, Dispersions, ModelConfig, ModelParams, ProductionModel};
use crate::elicit::{elicit_gamma_log, ElicitedQuartiles, FitObjective};
use crate::gp::{LatentGP, SEKernel};
use crate::ingest::AnchoredPrior;

fn gp(rng: &mut ChaCha8Rng, horizon: usize, a: f64, b: f64, sigma: f64, l: f64) -> LatentGP {
    LatentGP {
        mean_intercept: a,
        mean_slope: b,
        kernel: SEKernel::new(sigma, l).unwrap(),
        whitened: (0..horizon).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// Plausible parameters with random innovations.
pub fn truth(horizon: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams {
        lambda_gp: gp(&mut rng, horizon, 80f64.ln(), 0.03, 0.3, 6.0),
        nu_gp: gp(&mut rng, horizon, -2.5, 0.005, 0.3, 15.0),
        rho_gp: gp(&mut rng, horizon, -1.2, 0.0, 0.3, 15.0),
        men_gp: gp(&mut rng, horizon, 0.2, -0.01, 0.3, 15.0),
        pi_nu: 1.6,
        pi_a: 0.4,
        dispersions: Dispersions {
            phi_y: 30.0,
            phi_pc: 25.0,
            phi_loced: 40.0,
            phi_ath: 15.0,
            phi_g: 20.0,
        },
    }
}

/// Elicited priors anchored at whichever of 1886, 1891, 1894 fit the horizon.
pub fn elicited(horizon: usize) -> Vec<AnchoredPrior> {
    [(1886, [394.0, 482.0, 613.0]), (1891, [500.0, 600.0, 720.0]), (1894, [520.0, 640.0, 800.0])]
        .into_iter()
        .filter(|&(y, _)| ((y - 1799) as usize) <= horizon)
        .map(|(year, q)| AnchoredPrior {
            t: (year - 1799) as usize,
            prior: elicit_gamma_log(&ElicitedQuartiles::new(year, q, 0.125).unwrap(), FitObjective::Quantile)
                .unwrap(),
        })
        .collect()
}

/// A model over data simulated from [`truth`] on the historical schedule.
pub fn model(horizon: usize, seed: u64) -> (ProductionModel, ModelParams) {
    let params = truth(horizon, seed);
    let mut shape = DataShape::standard(horizon);
    shape.elicited = elicited(horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let data = simulate(&params, 1e-6, &shape, &mut rng).unwrap();
    (ProductionModel::new(ModelConfig::with_horizon(horizon), data).unwrap(), params)
}
