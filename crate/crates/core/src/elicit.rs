//! Turning expert-elicited quartiles into parametric priors.
//!
//! Two fits are offered: a Normal on the natural (count-rate) scale, and a
//! shape/rate Gamma fitted to the log-transformed quartiles, which is the form
//! the production model uses for a year's log rate.

use serde::{Deserialize, Serialize};

use crate::dist::{normal_quantile, DistSpec, Family};
use crate::error::{Error, Result};

pub const QUARTILE_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitedQuartiles {
    pub year: i32,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    #[serde(default)]
    pub discount_rate: f64,
}

impl ElicitedQuartiles {
    pub fn new(year: i32, triple: [f64; 3], discount_rate: f64) -> Result<Self> {
        let q = Self {
            year,
            q25: triple[0],
            q50: triple[1],
            q75: triple[2],
            discount_rate,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn triple(&self) -> [f64; 3] {
        [self.q25, self.q50, self.q75]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.triple();
        if t.iter().any(|v| !v.is_finite() || *v <= 0.0) || !(t[0] < t[1] && t[1] < t[2]) {
            return Err(Error::DegenerateTriple(t));
        }
        if !(0.0..1.0).contains(&self.discount_rate) {
            return Err(Error::Domain(format!(
                "discount rate must lie in [0,1), got {}",
                self.discount_rate
            )));
        }
        Ok(())
    }

    pub fn with_discount(mut self, rate: f64) -> Self {
        self.discount_rate = rate;
        self
    }
}

/// Scale every quartile by `1 - discount_rate`. The result carries a zero rate.
pub fn discount(q: &ElicitedQuartiles) -> ElicitedQuartiles {
    let keep = 1.0 - q.discount_rate;
    ElicitedQuartiles {
        year: q.year,
        q25: q.q25 * keep,
        q50: q.q50 * keep,
        q75: q.q75 * keep,
        discount_rate: 0.0,
    }
}

/// What "as close as possible" is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitObjective {
    /// Squared error between target and fitted quartiles.
    #[default]
    Quantile,
    /// Squared error between 0.25/0.5/0.75 and the fitted CDF at the targets.
    Cdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitedPrior {
    pub year: i32,
    #[serde(flatten)]
    pub fitted: DistSpec,
    /// Quartiles of the fitted distribution, on the natural scale.
    pub achieved_quartiles: [f64; 3],
    /// Largest relative deviation between achieved and target quartiles.
    pub fit_error: f64,
}

impl ElicitedPrior {
    /// True when the fitted family describes the log rate rather than the rate.
    pub fn is_log_scale(&self) -> bool {
        self.fitted.family == Family::GammaShapeRate
    }
}

fn check_triple(q: [f64; 3]) -> Result<()> {
    if q.iter().any(|v| !v.is_finite()) || !(q[0] < q[1] && q[1] < q[2]) {
        return Err(Error::DegenerateTriple(q));
    }
    Ok(())
}

fn unit_normal_quartiles() -> Result<[f64; 3]> {
    Ok([
        normal_quantile(QUARTILE_LEVELS[0])?,
        0.0,
        normal_quantile(QUARTILE_LEVELS[2])?,
    ])
}

fn max_rel_error(achieved: &[f64; 3], target: &[f64; 3]) -> f64 {
    achieved
        .iter()
        .zip(target)
        .map(|(a, t)| ((a - t) / t).abs())
        .fold(0.0, f64::max)
}

/// Minimise over two parameters by compass search with step halving.
fn compass_search(f: impl Fn(f64, f64) -> f64, start: (f64, f64), step: (f64, f64)) -> (f64, f64) {
    let (mut x, mut y) = start;
    let (mut sx, mut sy) = step;
    let mut best = f(x, y);
    let dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    for _ in 0..20_000 {
        let mut moved = false;
        for &(dx, dy) in &dirs {
            let (cx, cy) = (x + dx * sx, y + dy * sy);
            let v = f(cx, cy);
            if v < best {
                best = v;
                x = cx;
                y = cy;
                moved = true;
                break;
            }
        }
        if !moved {
            sx *= 0.5;
            sy *= 0.5;
            if sx < 1e-13 * x.abs().max(1.0) && sy < 1e-13 * y.abs().max(1.0) {
                break;
            }
        }
    }
    (x, y)
}

/// Fit a Normal to a quartile triple.
pub fn fit_normal(q: [f64; 3]) -> Result<DistSpec> {
    fit_normal_with(q, FitObjective::Quantile)
}

pub fn fit_normal_with(q: [f64; 3], objective: FitObjective) -> Result<DistSpec> {
    check_triple(q)?;
    let z = unit_normal_quartiles()?;
    // Moment-matched start; also the exact least-squares optimum in quartile space,
    // since the quartiles are linear in (mean, sd) and the z's sum to zero.
    let mean0 = q.iter().sum::<f64>() / 3.0;
    let sd0 = z.iter().zip(&q).map(|(z, q)| z * q).sum::<f64>() / z.iter().map(|z| z * z).sum::<f64>();
    match objective {
        FitObjective::Quantile => DistSpec::normal(mean0, sd0),
        FitObjective::Cdf => {
            let loss = |m: f64, log_sd: f64| {
                let spec = DistSpec {
                    family: Family::Normal,
                    params: vec![m, log_sd.exp()],
                };
                q.iter()
                    .zip(QUARTILE_LEVELS)
                    .map(|(&x, p)| (spec.cdf(x).unwrap_or(f64::NAN) - p).powi(2))
                    .sum::<f64>()
            };
            let (m, log_sd) = compass_search(loss, (mean0, sd0.ln()), (0.1 * sd0, 0.1));
            DistSpec::normal(m, log_sd.exp())
        }
    }
}

/// Fit a shape/rate Gamma to the natural-log of a quartile triple.
pub fn fit_gamma_log(q: [f64; 3]) -> Result<DistSpec> {
    fit_gamma_log_with(q, FitObjective::Quantile)
}

pub fn fit_gamma_log_with(q: [f64; 3], objective: FitObjective) -> Result<DistSpec> {
    check_triple(q)?;
    if q[0] <= 1.0 {
        return Err(Error::DegenerateTriple(q));
    }
    let y = [q[0].ln(), q[1].ln(), q[2].ln()];
    let z = unit_normal_quartiles()?;
    let mean0 = y[1];
    let sd0 = (y[2] - y[0]) / (z[2] - z[0]);
    let shape0 = (mean0 / sd0).powi(2);

    // For a fixed shape the quantiles scale as 1/rate, so the best rate is a
    // one-line least-squares solve; the search runs over ln(shape) alone.
    let unit_quartiles = |shape: f64| -> Result<[f64; 3]> {
        let g = DistSpec::gamma(shape, 1.0)?;
        Ok([
            g.quantile(QUARTILE_LEVELS[0])?,
            g.quantile(QUARTILE_LEVELS[1])?,
            g.quantile(QUARTILE_LEVELS[2])?,
        ])
    };
    let best_rate = |u: &[f64; 3]| -> f64 {
        let num: f64 = u.iter().map(|u| u * u).sum();
        let den: f64 = u.iter().zip(&y).map(|(u, y)| u * y).sum();
        num / den
    };
    let profile = |log_shape: f64| -> f64 {
        let Ok(u) = unit_quartiles(log_shape.exp()) else {
            return f64::INFINITY;
        };
        let rate = best_rate(&u);
        u.iter().zip(&y).map(|(u, y)| (u / rate - y).powi(2)).sum()
    };

    let (lo, hi) = ((shape0 / 100.0).ln(), (shape0 * 100.0).ln());
    let log_shape = golden_section(profile, lo, hi, 1e-12);
    let shape = log_shape.exp();
    let rate = best_rate(&unit_quartiles(shape)?);

    match objective {
        FitObjective::Quantile => DistSpec::gamma(shape, rate),
        FitObjective::Cdf => {
            let loss = |ls: f64, lr: f64| {
                let spec = DistSpec {
                    family: Family::GammaShapeRate,
                    params: vec![ls.exp(), lr.exp()],
                };
                y.iter()
                    .zip(QUARTILE_LEVELS)
                    .map(|(&x, p)| (spec.cdf(x).unwrap_or(f64::NAN) - p).powi(2))
                    .sum::<f64>()
            };
            let (ls, lr) = compass_search(loss, (shape.ln(), rate.ln()), (0.05, 0.05));
            DistSpec::gamma(ls.exp(), lr.exp())
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Quartiles of a fitted prior on the natural scale.
pub fn achieved_quartiles(spec: &DistSpec) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(QUARTILE_LEVELS) {
        let v = spec.quantile(p)?;
        *o = if spec.family == Family::GammaShapeRate { v.exp() } else { v };
    }
    Ok(out)
}

fn package(year: i32, target: [f64; 3], fitted: DistSpec) -> Result<ElicitedPrior> {
    let achieved = achieved_quartiles(&fitted)?;
    Ok(ElicitedPrior {
        year,
        fitted,
        achieved_quartiles: achieved,
        fit_error: max_rel_error(&achieved, &target),
    })
}

/// Discount, then fit a Normal on the natural scale.
pub fn elicit_normal(q: &ElicitedQuartiles, objective: FitObjective) -> Result<ElicitedPrior> {
    q.validate()?;
    let d = discount(q).triple();
    package(q.year, d, fit_normal_with(d, objective)?)
}

/// Discount, then fit a Gamma to the log quartiles. This is the form the model consumes.
pub fn elicit_gamma_log(q: &ElicitedQuartiles, objective: FitObjective) -> Result<ElicitedPrior> {
    q.validate()?;
    let d = discount(q).triple();
    package(q.year, d, fit_gamma_log_with(d, objective)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartile_loss(spec: &DistSpec, target: &[f64; 3], log_scale: bool) -> f64 {
        QUARTILE_LEVELS
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let t = if log_scale { t.ln() } else { t };
                (spec.quantile(p).unwrap() - t).powi(2)
            })
            .sum()
    }

    #[test]
    fn discount_examples() {
        let q = ElicitedQuartiles::new(1886, [450.0, 550.0, 700.0], 0.125).unwrap();
        let d = discount(&q);
        assert_eq!(d.triple(), [393.75, 481.25, 612.5]);
        let q0 = q.with_discount(0.0);
        assert_eq!(discount(&q0).triple(), q0.triple());
        let half = ElicitedQuartiles::new(1, [100.0, 200.0, 300.0], 0.5).unwrap();
        assert_eq!(discount(&half).triple(), [50.0, 100.0, 150.0]);
    }

    #[test]
    fn discount_composes_multiplicatively() {
        let q = ElicitedQuartiles::new(1, [10.0, 20.0, 35.0], 0.2).unwrap();
        let twice = discount(&discount(&q).with_discount(0.3));
        let once = discount(&q.with_discount(1.0 - 0.8 * 0.7));
        for (a, b) in twice.triple().iter().zip(once.triple()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_normal_fit() {
        let spec = fit_normal([-1.0, 0.0, 1.0]).unwrap();
        assert!(spec.params[0].abs() < 1e-12);
        assert!((spec.params[1] - 1.4826).abs() < 1e-4);
        let spec = fit_normal([10.0, 20.0, 30.0]).unwrap();
        assert!((spec.quantile(0.5).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn normal_fit_scale_equivariance() {
        let base = fit_normal([394.0, 482.0, 613.0]).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let s = fit_normal([394.0 * c, 482.0 * c, 613.0 * c]).unwrap();
            assert!((s.params[0] - c * base.params[0]).abs() < 1e-9 * c * base.params[0]);
            assert!((s.params[1] - c * base.params[1]).abs() < 1e-9 * c * base.params[1]);
        }
    }

    #[test]
    fn normal_fit_is_grid_optimal() {
        let target = [394.0, 482.0, 613.0];
        let spec = fit_normal(target).unwrap();
        let best = quartile_loss(&spec, &target, false);
        for i in 0..100 {
            for j in 0..100 {
                let m = spec.params[0] + (i as f64 - 49.5) * 0.05;
                let s = spec.params[1] + (j as f64 - 49.5) * 0.05;
                let alt = DistSpec::normal(m, s).unwrap();
                assert!(quartile_loss(&alt, &target, false) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn gamma_fit_is_grid_optimal() {
        let target = [394.0, 482.0, 613.0];
        let spec = fit_gamma_log(target).unwrap();
        let best = quartile_loss(&spec, &target, true);
        let (k, r) = (spec.params[0], spec.params[1]);
        for i in 0..100 {
            for j in 0..100 {
                let alt = DistSpec::gamma(
                    k * (1.0 + (i as f64 - 49.5) * 2e-4),
                    r * (1.0 + (j as f64 - 49.5) * 2e-4),
                )
                .unwrap();
                assert!(quartile_loss(&alt, &target, true) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn gamma_fixed_point() {
        let exact = DistSpec::gamma(278.0, 46.0).unwrap();
        let q = [
            exact.quantile(0.25).unwrap().exp(),
            exact.quantile(0.5).unwrap().exp(),
            exact.quantile(0.75).unwrap().exp(),
        ];
        let fit = fit_gamma_log(q).unwrap();
        assert!((fit.params[0] / 278.0 - 1.0).abs() < 1e-4, "{:?}", fit.params);
        assert!((fit.params[1] / 46.0 - 1.0).abs() < 1e-4, "{:?}", fit.params);
    }

    #[test]
    fn gamma_log_symmetric_triple() {
        let fit = fit_gamma_log([100.0, 200.0, 400.0]).unwrap();
        let median = fit.quantile(0.5).unwrap();
        assert!((median / 200f64.ln() - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_triples() {
        assert!(matches!(fit_normal([1.0, 1.0, 2.0]), Err(Error::DegenerateTriple(_))));
        assert!(matches!(fit_gamma_log([3.0, 2.0, 4.0]), Err(Error::DegenerateTriple(_))));
        assert!(ElicitedQuartiles::new(1886, [5.0, 4.0, 6.0], 0.0).is_err());
    }

    #[test]
    fn cdf_objective_runs() {
        let spec = fit_normal_with([394.0, 482.0, 613.0], FitObjective::Cdf).unwrap();
        // Least squares in probability space lands near (494.1, 164.3).
        assert!((spec.params[0] - 494.13).abs() < 0.05, "{:?}", spec.params);
        assert!((spec.params[1] - 164.30).abs() < 0.05, "{:?}", spec.params);
    }

    #[test]
    fn prior_json_shape() {
        let q = ElicitedQuartiles::new(1886, [394.0, 482.0, 613.0], 0.0).unwrap();
        let p = elicit_normal(&q, FitObjective::Quantile).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        for key in ["year", "family", "params", "achieved_quartiles", "fit_error"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ElicitedPrior = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
