//! Author-gender proportions for 1789..1799 from a small annotated sample per
//! year: multinomial counts under a Dirichlet prior centred on 1800.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{empirical_quantile, sample_dirichlet};
use crate::error::{Error, Result};
use crate::ingest::EarlySampleRow;

pub const FIRST_YEAR: i32 = 1789;
pub const LAST_YEAR: i32 = 1799;
/// Pseudo-count weight of the prior centred on the 1800 proportions.
pub const DEFAULT_STRENGTH: f64 = 10.0;
/// Zero proportions are raised to this before renormalizing.
pub const PROPORTION_FLOOR: f64 = 1e-3;
pub const CATEGORIES: [&str; 3] = ["men", "women", "unknown"];

/// One year's annotated sample and the known number of novels that year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyYearSample {
    pub year: i32,
    /// (men, women, unknown)
    pub counts: [u64; 3],
    pub rfgs_total: u64,
}

impl EarlyYearSample {
    pub fn new(year: i32, counts: [u64; 3], rfgs_total: u64) -> Result<Self> {
        if !(FIRST_YEAR..=LAST_YEAR).contains(&year) {
            return Err(Error::YearOutOfWindow {
                year,
                start: FIRST_YEAR,
                end: LAST_YEAR,
            });
        }
        if rfgs_total == 0 {
            return Err(Error::Domain(format!("year {year}: total must be positive")));
        }
        let n: u64 = counts.iter().sum();
        if n > rfgs_total {
            return Err(Error::Domain(format!(
                "year {year}: sample of {n} exceeds the {rfgs_total} novels published"
            )));
        }
        Ok(Self {
            year,
            counts,
            rfgs_total,
        })
    }

    /// Join annotated rows with the known totals; every row needs a total.
    pub fn join(rows: &[EarlySampleRow], totals: &[(i32, u64)]) -> Result<Vec<Self>> {
        rows.iter()
            .map(|r| {
                let total = totals
                    .iter()
                    .find(|(y, _)| *y == r.year)
                    .map(|(_, n)| *n)
                    .ok_or_else(|| Error::Domain(format!("no total for year {}", r.year)))?;
                Self::new(r.year, [r.men, r.women, r.unknown], total)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub concentration: [f64; 3],
}

impl DirichletPrior {
    pub fn new(concentration: [f64; 3]) -> Result<Self> {
        if concentration.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Domain(format!(
                "Dirichlet concentration must be positive, got {concentration:?}"
            )));
        }
        Ok(Self { concentration })
    }

    pub fn mean(&self) -> [f64; 3] {
        let s: f64 = self.concentration.iter().sum();
        self.concentration.map(|a| a / s)
    }
}

/// Prior with concentration `strength * p1800`, zero shares floored first.
pub fn build_prior(p1800: [f64; 3], strength: f64) -> Result<DirichletPrior> {
    if !(strength.is_finite() && strength > 0.0) {
        return Err(Error::Domain(format!("prior strength must be positive, got {strength}")));
    }
    if p1800.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain(format!("proportions must be non-negative, got {p1800:?}")));
    }
    let sum: f64 = p1800.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("proportions sum to {sum}, not 1")));
    }
    let floored = p1800.map(|p| p.max(PROPORTION_FLOOR));
    let s: f64 = floored.iter().sum();
    DirichletPrior::new(floored.map(|p| strength * p / s))
}

/// Conjugate update: concentration plus observed counts.
pub fn posterior(sample: &EarlyYearSample, prior: &DirichletPrior) -> DirichletPrior {
    let mut c = prior.concentration;
    for (a, k) in c.iter_mut().zip(sample.counts) {
        *a += k as f64;
    }
    DirichletPrior { concentration: c }
}

/// Posterior draws of the year's per-category novel counts.
pub fn year_count_draws(
    sample: &EarlyYearSample,
    prior: &DirichletPrior,
    draws: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    let post = posterior(sample, prior);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample.year as u64);
    let total = sample.rfgs_total as f64;
    (0..draws)
        .map(|_| {
            let p = sample_dirichlet(&post.concentration, &mut rng)?;
            Ok([p[0] * total, p[1] * total, p[2] * total])
        })
        .collect()
}

/// Requested quantiles of each category's count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountIntervals {
    pub label: String,
    pub total: u64,
    pub probs: Vec<f64>,
    /// `quantiles[category][k]` at `probs[k]`.
    pub quantiles: [Vec<f64>; 3],
}

impl CountIntervals {
    fn from_draws(label: String, total: u64, draws: &[[f64; 3]], probs: &[f64]) -> Self {
        let quantiles = std::array::from_fn(|c| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            v.sort_by(f64::total_cmp);
            probs.iter().map(|&p| empirical_quantile(&v, p)).collect()
        });
        Self {
            label,
            total,
            probs: probs.to_vec(),
            quantiles,
        }
    }
}

pub fn year_count_intervals(
    sample: &EarlyYearSample,
    prior: &DirichletPrior,
    probs: &[f64],
    draws: usize,
    seed: u64,
) -> Result<CountIntervals> {
    let d = year_count_draws(sample, prior, draws, seed)?;
    Ok(CountIntervals::from_draws(
        sample.year.to_string(),
        sample.rfgs_total,
        &d,
        probs,
    ))
}

/// Intervals for the summed counts of several years, aggregated draw by draw.
/// Years are independent, so each uses its own stream of `seed`.
pub fn aggregate_count_intervals(
    label: &str,
    samples: &[EarlyYearSample],
    prior: &DirichletPrior,
    probs: &[f64],
    draws: usize,
    seed: u64,
) -> Result<CountIntervals> {
    let per_year: Vec<Vec<[f64; 3]>> = samples
        .par_iter()
        .map(|s| year_count_draws(s, prior, draws, seed))
        .collect::<Result<_>>()?;
    let summed: Vec<[f64; 3]> = (0..draws)
        .map(|i| std::array::from_fn(|c| per_year.iter().map(|y| y[i][c]).sum()))
        .collect();
    let total = samples.iter().map(|s| s.rfgs_total).sum();
    Ok(CountIntervals::from_draws(label.to_string(), total, &summed, probs))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dist::{dirichlet_ln_pdf, multinomial_ln_pmf};

    fn sample(counts: [u64; 3], total: u64) -> EarlyYearSample {
        EarlyYearSample::new(1795, counts, total).unwrap()
    }

    #[test]
    fn prior_construction() {
        let p = build_prior([0.5, 0.4, 0.1], 10.0).unwrap();
        for (a, b) in p.concentration.iter().zip([5.0, 4.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = build_prior([1.0 / 3.0; 3], 3.0).unwrap();
        assert!(u.concentration.iter().all(|a| (a - 1.0).abs() < 1e-12));
        let z = build_prior([0.6, 0.4, 0.0], 10.0).unwrap();
        assert!((z.concentration.iter().sum::<f64>() - 10.0).abs() < 1e-12);
        assert!((z.concentration[2] - 10.0 * 1e-3 / 1.001).abs() < 1e-12);
        let tiny = build_prior([0.5, 0.4, 0.1], 1e-9).unwrap();
        assert!(tiny.concentration.iter().all(|a| *a > 0.0));
        assert!(build_prior([0.5, 0.4, 0.1], 0.0).is_err());
        assert!(build_prior([0.5, 0.6, -0.1], 10.0).is_err());
        assert!(build_prior([0.5, 0.4, 0.4], 10.0).is_err());
    }

    #[test]
    fn conjugate_updates() {
        let flat = DirichletPrior::new([1.0; 3]).unwrap();
        let post = posterior(&sample([10, 0, 0], 50), &flat);
        assert_eq!(post.concentration, [11.0, 1.0, 1.0]);
        assert!((post.mean()[0] - 11.0 / 13.0).abs() < 1e-15);
        assert_eq!(posterior(&sample([0, 0, 0], 50), &flat), flat);
        let p = DirichletPrior::new([5.0, 4.0, 1.0]).unwrap();
        assert_eq!(posterior(&sample([3, 6, 1], 50), &p).concentration, [8.0, 10.0, 2.0]);
    }

    #[test]
    fn posterior_matches_grid_product() {
        // On an interior simplex grid, log prior + log likelihood - log posterior is constant.
        let prior = DirichletPrior::new([2.0, 1.5, 0.7]).unwrap();
        let s = sample([4, 2, 1], 40);
        let post = posterior(&s, &prior);
        let n = 12;
        let mut diffs = Vec::new();
        for i in 1..n {
            for j in 1..n - i {
                let p = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                let joint = dirichlet_ln_pdf(&prior.concentration, &p).unwrap()
                    + multinomial_ln_pmf(&s.counts, &p).unwrap();
                diffs.push(joint - dirichlet_ln_pdf(&post.concentration, &p).unwrap());
            }
        }
        let first = diffs[0];
        assert!(diffs.iter().all(|d| (d - first).abs() < 1e-10));
    }

    #[test]
    fn degenerate_posterior_is_a_point_mass() {
        let prior = DirichletPrior::new([1e6, 1.0, 1.0]).unwrap();
        let iv = year_count_intervals(&sample([0, 0, 0], 100), &prior, &[0.05, 0.95], 2000, 1).unwrap();
        assert!((iv.quantiles[0][0] - 100.0).abs() < 0.1);
        assert!((iv.quantiles[0][1] - 100.0).abs() < 0.1);
    }

    #[test]
    fn uniform_posterior_matches_beta_marginal() {
        // Men share is Beta(1, 2): quantile 1 - sqrt(1 - p).
        let prior = DirichletPrior::new([1.0; 3]).unwrap();
        let iv = year_count_intervals(&sample([0, 0, 0], 300), &prior, &[0.05, 0.95], 100_000, 7).unwrap();
        let exact = |p: f64| 300.0 * (1.0 - (1.0 - p).sqrt());
        assert!((iv.quantiles[0][0] - exact(0.05)).abs() < 0.5, "{:?}", iv.quantiles[0]);
        assert!((iv.quantiles[0][1] - exact(0.95)).abs() < 2.0, "{:?}", iv.quantiles[0]);
    }

    #[test]
    fn aggregation_is_draw_wise() {
        let prior = build_prior([0.4, 0.35, 0.25], DEFAULT_STRENGTH).unwrap();
        let samples: Vec<_> = [(1790, [5, 3, 2], 40), (1791, [2, 6, 2], 60)]
            .iter()
            .map(|&(y, c, n)| EarlyYearSample::new(y, c, n).unwrap())
            .collect();
        let probs = [0.05, 0.5, 0.95];
        let agg = aggregate_count_intervals("1790-1791", &samples, &prior, &probs, 1000, 3).unwrap();
        let a = year_count_draws(&samples[0], &prior, 1000, 3).unwrap();
        let b = year_count_draws(&samples[1], &prior, 1000, 3).unwrap();
        let mut men: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x[0] + y[0]).collect();
        men.sort_by(f64::total_cmp);
        for (k, &p) in probs.iter().enumerate() {
            assert_eq!(agg.quantiles[0][k], empirical_quantile(&men, p));
        }
        assert_eq!(agg.total, 100);
    }

    #[test]
    fn sample_validation() {
        assert!(EarlyYearSample::new(1800, [1, 1, 1], 10).is_err());
        assert!(EarlyYearSample::new(1790, [1, 1, 1], 0).is_err());
        assert!(EarlyYearSample::new(1790, [5, 5, 5], 10).is_err());
        let rows = [EarlySampleRow { year: 1790, men: 4, women: 4, unknown: 2 }];
        assert_eq!(EarlyYearSample::join(&rows, &[(1790, 30)]).unwrap()[0].rfgs_total, 30);
        assert!(EarlyYearSample::join(&rows, &[(1791, 30)]).is_err());
    }

    proptest! {
        #[test]
        fn draws_stay_on_the_simplex(
            counts in prop::array::uniform3(0u64..10),
            extra in 0u64..500,
            seed in any::<u64>(),
        ) {
            let total = counts.iter().sum::<u64>() + extra + 1;
            let s = sample(counts, total);
            let prior = build_prior([0.45, 0.35, 0.2], DEFAULT_STRENGTH).unwrap();
            for d in year_count_draws(&s, &prior, 50, seed).unwrap() {
                prop_assert!(d.iter().all(|c| *c >= 0.0 && *c <= total as f64));
                let share: f64 = d.iter().sum::<f64>() / total as f64;
                prop_assert!((share - 1.0).abs() < 1e-12);
            }
        }
    }
}
