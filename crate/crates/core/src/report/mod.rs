//! Posterior summaries: per-year credible intervals, per-capita rates,
//! decade tables, growth rates and plots.
//!
//! Every summary is computed draw by draw: a draw of each year's rates is
//! transformed (summed, divided, split) before any quantile is taken.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::empirical_quantile;
use crate::early_gender::{year_count_draws, DirichletPrior, EarlyYearSample};
use crate::error::{Error, Result};
use crate::ingest::{AlignedDataset, PopulationSeries};
use crate::model::{derive_rates, ProductionModel};
use crate::sampler::PosteriorDraws;

pub mod svg;

/// Probabilities reported for every quantity.
pub const PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Draws of one year's (total, men, women, unknown) rates.
#[derive(Debug, Clone, PartialEq)]
pub struct YearDraws {
    pub year: i32,
    pub draws: Vec<[f64; 4]>,
    /// Total is an exhaustive count, constant across draws.
    pub known_total: bool,
    /// Gender counts are exhaustive counts, constant across draws.
    pub known_gender: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub mean: f64,
    pub q5: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Quantiles {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        let q = PROBS.map(|p| empirical_quantile(&v, p));
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q5: q[0],
            q25: q[1],
            q50: q[2],
            q75: q[3],
            q95: q[4],
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.mean, self.q5, self.q25, self.q50, self.q75, self.q95]
    }
}

/// Where the early-year (pre-1800) gender draws come from.
#[derive(Debug, Clone, Copy)]
pub struct EarlyGender {
    pub prior: DirichletPrior,
    pub seed: u64,
}

/// Per-draw rates for every modelled year, with known counts substituted.
///
/// A known RFGS total replaces the modelled total; when gender counts are
/// not also known, the modelled gender shares are applied to it. Known RFGS
/// gender counts replace all three categories. Years before the window are
/// included when both their total and annotated sample are present, with
/// gender drawn from the conjugate posterior.
pub fn year_draws(
    draws: &PosteriorDraws,
    model: &ProductionModel,
    early: Option<EarlyGender>,
) -> Result<Vec<YearDraws>> {
    let data = model.data();
    let jitter = model.config().jitter;
    let n = draws.total_draws();
    let per_draw: Vec<Vec<[f64; 4]>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let x = draws.draw(k / draws.iterations, k % draws.iterations);
            let rates = derive_rates(&model.to_params(x)?, jitter)?;
            Ok((1..=data.horizon)
                .map(|t| {
                    let (m, w, u) = rates.gender_category_rates(t);
                    [rates.novel_rate[t - 1], m, w, u]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = early_year_draws(data, early, n)?;
    for t in 1..=data.horizon {
        let column: Vec<[f64; 4]> = per_draw.iter().map(|d| d[t - 1]).collect();
        out.push(with_known_counts(data, data.year_of(t), column));
    }
    Ok(out)
}

/// Substitute exhaustive counts for a modelled year's draws.
pub fn with_known_counts(data: &AlignedDataset, year: i32, mut draws: Vec<[f64; 4]>) -> YearDraws {
    let total = data.known_total(year);
    let gender = data.known_gender(year);
    if let Some(g) = gender {
        let c = [g.men as f64, g.women as f64, g.unknown as f64];
        let sum = c.iter().sum::<f64>();
        for d in draws.iter_mut() {
            *d = [total.map_or(sum, |n| n as f64), c[0], c[1], c[2]];
        }
    } else if let Some(n) = total {
        let n = n as f64;
        for d in draws.iter_mut() {
            let scale = n / d[0];
            *d = [n, d[1] * scale, d[2] * scale, d[3] * scale];
        }
    }
    YearDraws {
        year,
        draws,
        known_total: total.is_some() || gender.is_some(),
        known_gender: gender.is_some(),
    }
}

fn early_year_draws(data: &AlignedDataset, early: Option<EarlyGender>, n: usize) -> Result<Vec<YearDraws>> {
    let Some(early) = early else {
        return Ok(Vec::new());
    };
    let samples = EarlyYearSample::join(&data.early_samples, &data.early_totals)?;
    samples
        .iter()
        .map(|s| {
            let counts = year_count_draws(s, &early.prior, n, early.seed)?;
            Ok(YearDraws {
                year: s.year,
                draws: counts.iter().map(|c| [s.rfgs_total as f64, c[0], c[1], c[2]]).collect(),
                known_total: true,
                known_gender: false,
            })
        })
        .collect()
}

/// Population in a year, interpolated linearly between bracketing entries.
pub fn population_at(population: &PopulationSeries, year: i32) -> Result<f64> {
    if let Some(p) = population.get(year) {
        return Ok(p as f64);
    }
    let e = population.entries();
    let after = e.iter().position(|&(y, _)| y > year);
    match after {
        Some(i) if i > 0 => {
            let ((y0, p0), (y1, p1)) = (e[i - 1], e[i]);
            let w = (year - y0) as f64 / (y1 - y0) as f64;
            Ok(p0 as f64 + w * (p1 as f64 - p0 as f64))
        }
        _ => Err(Error::MissingPopulation(year)),
    }
}

/// Rate per million persons.
pub fn per_capita(rate: f64, population: f64) -> f64 {
    rate / (population / 1e6)
}

/// Per-capita total-rate draws for one year.
pub fn per_capita_draws(year: &YearDraws, population: &PopulationSeries) -> Result<Vec<f64>> {
    let p = population_at(population, year.year)?;
    Ok(year.draws.iter().map(|d| per_capita(d[0], p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: i32,
    pub known_total: bool,
    pub known_gender: bool,
    pub total: Quantiles,
    pub men: Quantiles,
    pub women: Quantiles,
    pub unknown: Quantiles,
    /// Omitted when population is unavailable for the year.
    pub per_capita: Option<Quantiles>,
    /// Men's share of titles with a known author gender.
    pub men_share_known: Quantiles,
}

/// Quantiles of every quantity; per-capita only where population exists.
pub fn summarize(years: &[YearDraws], population: Option<&PopulationSeries>) -> Result<Vec<YearSummary>> {
    years
        .par_iter()
        .map(|y| {
            if y.draws.is_empty() {
                return Err(Error::Domain(format!("no draws for {}", y.year)));
            }
            let col = |c: usize| Quantiles::of(y.draws.iter().map(|d| d[c]));
            let per_capita = match population {
                Some(p) => match per_capita_draws(y, p) {
                    Ok(v) => Some(Quantiles::of(v)),
                    Err(Error::MissingPopulation(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            Ok(YearSummary {
                year: y.year,
                known_total: y.known_total,
                known_gender: y.known_gender,
                total: col(0),
                men: col(1),
                women: col(2),
                unknown: col(3),
                per_capita,
                men_share_known: Quantiles::of(y.draws.iter().map(|d| d[1] / (d[1] + d[2]))),
            })
        })
        .collect()
}

fn find(years: &[YearDraws], year: i32) -> Result<&YearDraws> {
    years.iter().find(|y| y.year == year).ok_or_else(|| Error::YearOutOfWindow {
        year,
        start: years.first().map_or(year, |y| y.year),
        end: years.last().map_or(year, |y| y.year),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub start_year: i32,
    pub end_year: i32,
    pub per_capita: bool,
    pub rate: Quantiles,
}

/// Average annual growth `(x_end / x_start)^(1 / years) - 1`, per draw, of
/// the per-capita rate (or of the raw rate without population).
pub fn growth_rate(
    years: &[YearDraws],
    population: Option<&PopulationSeries>,
    start_year: i32,
    end_year: i32,
) -> Result<Growth> {
    if end_year <= start_year {
        return Err(Error::Domain(format!("growth needs start < end, got {start_year}..{end_year}")));
    }
    let (a, b) = (find(years, start_year)?, find(years, end_year)?);
    let series = |y: &YearDraws| -> Result<Vec<f64>> {
        match population {
            Some(p) => per_capita_draws(y, p),
            None => Ok(y.draws.iter().map(|d| d[0]).collect()),
        }
    };
    let (xa, xb) = (series(a)?, series(b)?);
    let span = (end_year - start_year) as f64;
    Ok(Growth {
        start_year,
        end_year,
        per_capita: population.is_some(),
        rate: Quantiles::of(xa.iter().zip(&xb).map(|(s, e)| (e / s).powf(1.0 / span) - 1.0)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecadeRow {
    pub start: i32,
    pub end: i32,
    /// Every year's total is an exhaustive count.
    pub known_total: bool,
    pub total: Quantiles,
    /// (men, women, unknown) counts.
    pub counts: [Quantiles; 3],
    /// (men, women, unknown) shares of the decade total.
    pub shares: [Quantiles; 3],
}

/// Rows for every complete decade (years d0..d9 all present), aggregated draw by draw.
pub fn decade_table(years: &[YearDraws]) -> Result<Vec<DecadeRow>> {
    let Some(first) = years.iter().map(|y| y.year).min() else {
        return Ok(Vec::new());
    };
    let last = years.iter().map(|y| y.year).max().unwrap_or(first);
    let mut rows = Vec::new();
    let mut start = first.div_euclid(10) * 10;
    while start + 9 <= last {
        let members: Vec<&YearDraws> = (start..start + 10).filter_map(|y| find(years, y).ok()).collect();
        if members.len() == 10 {
            let n = members[0].draws.len();
            if members.iter().any(|m| m.draws.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: members.iter().map(|m| m.draws.len()).find(|&l| l != n).unwrap_or(n),
                });
            }
            let sums: Vec<[f64; 4]> = (0..n)
                .map(|k| std::array::from_fn(|c| members.iter().map(|m| m.draws[k][c]).sum()))
                .collect();
            rows.push(DecadeRow {
                start,
                end: start + 9,
                known_total: members.iter().all(|m| m.known_total),
                total: Quantiles::of(sums.iter().map(|s| s[0])),
                counts: std::array::from_fn(|c| Quantiles::of(sums.iter().map(|s| s[c + 1]))),
                shares: std::array::from_fn(|c| Quantiles::of(sums.iter().map(|s| s[c + 1] / s[0]))),
            });
        }
        start += 10;
    }
    Ok(rows)
}

/// Draw-wise total over an inclusive span of years (all must be present).
pub fn span_total(years: &[YearDraws], start: i32, end: i32) -> Result<Quantiles> {
    let members: Vec<&YearDraws> = (start..=end).map(|y| find(years, y)).collect::<Result<_>>()?;
    let n = members.first().map_or(0, |m| m.draws.len());
    Ok(Quantiles::of((0..n).map(|k| members.iter().map(|m| m.draws[k][0]).sum())))
}

const QUANTILE_COLUMNS: [&str; 6] = ["mean", "q5", "q25", "q50", "q75", "q95"];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// `summary.csv`: year, known flags, total quantiles, per-gender quantiles,
/// men's share of known, per-capita quantiles (empty without population).
pub fn write_summary(path: &Path, rows: &[YearSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["year".to_string(), "known_total".into(), "known_gender".into()];
    header.extend(QUANTILE_COLUMNS.iter().map(|c| c.to_string()));
    for q in ["men", "women", "unknown", "men_share_known", "per_capita"] {
        header.extend(QUANTILE_COLUMNS.iter().map(|c| format!("{q}_{c}")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.year.to_string(), r.known_total.to_string(), r.known_gender.to_string()];
        for q in [&r.total, &r.men, &r.women, &r.unknown, &r.men_share_known] {
            rec.extend(q.values().map(fmt));
        }
        match &r.per_capita {
            Some(q) => rec.extend(q.values().map(fmt)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `decades.csv`: 90% intervals and medians of counts and shares.
pub fn write_decades(path: &Path, rows: &[DecadeRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["decade_start".to_string(), "decade_end".into(), "known_total".into()];
    header.extend(["total_q5", "total_q50", "total_q95"].map(String::from));
    for g in ["men", "women", "unknown"] {
        header.extend(["q5", "q50", "q95", "share_q5", "share_q50", "share_q95"].map(|c| format!("{g}_{c}")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.start.to_string(), r.end.to_string(), r.known_total.to_string()];
        rec.extend([r.total.q5, r.total.q50, r.total.q95].map(fmt));
        for c in 0..3 {
            let (q, s) = (&r.counts[c], &r.shares[c]);
            rec.extend([q.q5, q.q50, q.q95, s.q5, s.q50, s.q95].map(fmt));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `growth.csv`
pub fn write_growth(path: &Path, rows: &[Growth]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["start_year".to_string(), "end_year".into(), "per_capita".into()];
    header.extend(QUANTILE_COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for g in rows {
        let mut rec = vec![g.start_year.to_string(), g.end_year.to_string(), g.per_capita.to_string()];
        rec.extend(g.rate.values().map(fmt));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the three plots into `dir`. With population the rate plots are
/// per capita (`per_capita*.svg`); without, they show the raw rate
/// (`rate*.svg`). Returns the file names written.
pub fn emit_plots(dir: &Path, rows: &[YearSummary]) -> Result<Vec<String>> {
    let per_capita: Vec<(i32, Quantiles)> =
        rows.iter().filter_map(|r| r.per_capita.map(|q| (r.year, q))).collect();
    let (series, stem, label) = if per_capita.is_empty() {
        (rows.iter().map(|r| (r.year, r.total)).collect(), "rate", "New novels per year")
    } else {
        (per_capita, "per_capita", "New novels per million persons")
    };
    let shares: Vec<(i32, Quantiles)> = rows.iter().map(|r| (r.year, r.men_share_known)).collect();
    let files = [
        (format!("{stem}.svg"), svg::band_plot(label, &series, false)),
        (format!("{stem}_log10.svg"), svg::band_plot(&format!("{label} (log10 scale)"), &series, true)),
        ("men_share.svg".to_string(), svg::band_plot("Men's share of titles with known author gender", &shares, false)),
    ];
    let mut names = Vec::new();
    for (name, body) in files {
        let path = dir.join(&name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        names.push(name);
    }
    Ok(names)
}
