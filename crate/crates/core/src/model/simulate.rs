//! Synthetic datasets drawn from the observation model.

use rand::Rng;

use super::{derive_rates, DerivedRates, ModelParams};
use crate::dist::NegBin2Params;
use crate::error::{Error, Result};
use crate::ingest::{is_masked_loced_year, AlignedDataset, AnchoredPrior, GenderObservation, Observation, YEAR_ORIGIN};

/// Which years each source is observed in.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShape {
    pub horizon: usize,
    pub rfgs_total: Vec<i32>,
    pub rfgs_gender: Vec<i32>,
    pub loced: Vec<i32>,
    pub pc: Vec<i32>,
    pub athenaeum: Vec<i32>,
    pub athenaeum_gender: Vec<i32>,
    pub elicited: Vec<AnchoredPrior>,
}

impl DataShape {
    /// The historical schedule clipped to `horizon` years from 1800: RFGS
    /// totals 1800-1836 and gender 1800-1829, LOCED 1801-1870, PC 1843-1919,
    /// Athenaeum every fifth year 1860-1900.
    pub fn standard(horizon: usize) -> Self {
        let end = YEAR_ORIGIN + horizon as i32 - 1;
        let span = |a: i32, b: i32| (a..=b.min(end)).collect::<Vec<_>>();
        let ath: Vec<i32> = (1860..=1900).step_by(5).filter(|&y| y <= end).collect();
        Self {
            horizon,
            rfgs_total: span(1800, 1836),
            rfgs_gender: span(1800, 1829),
            loced: span(1801, 1870),
            pc: span(1843, 1919),
            athenaeum: ath.clone(),
            athenaeum_gender: ath,
            elicited: Vec::new(),
        }
    }

    /// The observation schedule of an existing dataset.
    pub fn of(data: &AlignedDataset) -> Self {
        let years = |obs: &Option<Vec<Observation>>| {
            obs.iter().flatten().map(|o| data.year_of(o.t)).collect::<Vec<_>>()
        };
        let gender_years = |obs: &Option<Vec<GenderObservation>>| {
            obs.iter().flatten().map(|o| data.year_of(o.t)).collect::<Vec<_>>()
        };
        Self {
            horizon: data.horizon,
            rfgs_total: years(&data.rfgs_total),
            rfgs_gender: gender_years(&data.rfgs_gender),
            loced: years(&data.loced),
            pc: years(&data.pc),
            athenaeum: years(&data.athenaeum),
            athenaeum_gender: gender_years(&data.athenaeum_gender),
            elicited: data.elicited.clone(),
        }
    }

    fn index(&self, year: i32) -> Result<usize> {
        let t = year - YEAR_ORIGIN + 1;
        if t < 1 || t as usize > self.horizon {
            return Err(Error::YearOutOfWindow {
                year,
                start: YEAR_ORIGIN,
                end: YEAR_ORIGIN + self.horizon as i32 - 1,
            });
        }
        Ok(t as usize)
    }
}

fn draw<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> Result<u64> {
    if mu == 0.0 {
        return Ok(0);
    }
    Ok(NegBin2Params::new(mu, phi)?.sample(rng))
}

fn gender_obs(t: usize, c: [u64; 3]) -> GenderObservation {
    GenderObservation {
        t,
        men: c[0],
        women: c[1],
        unknown: c[2],
    }
}

/// Draw every source at the rates implied by `params`.
///
/// Each count, including every gender cell, is an independent NegBin2 draw
/// from its own observation model, so simulated RFGS gender counts need not
/// sum to the simulated RFGS total. LOCED years ending in 0 or 5 are never
/// drawn.
pub fn simulate<R: Rng + ?Sized>(
    params: &ModelParams,
    jitter: f64,
    shape: &DataShape,
    rng: &mut R,
) -> Result<AlignedDataset> {
    if params.horizon() != shape.horizon {
        return Err(Error::DimensionMismatch {
            expected: shape.horizon,
            actual: params.horizon(),
        });
    }
    let rates: DerivedRates = derive_rates(params, jitter)?;
    let d = &params.dispersions;
    let mut data = AlignedDataset::empty(shape.horizon);

    let mut totals = Vec::with_capacity(shape.rfgs_total.len());
    for &year in &shape.rfgs_total {
        let t = shape.index(year)?;
        totals.push(Observation {
            t,
            count: draw(rates.novel_rate[t - 1], d.phi_y, rng)?,
        });
    }
    let mut gender = Vec::with_capacity(shape.rfgs_gender.len());
    for &year in &shape.rfgs_gender {
        let t = shape.index(year)?;
        let (m, w, u) = rates.gender_category_rates(t);
        gender.push(gender_obs(t, [draw(m, d.phi_g, rng)?, draw(w, d.phi_g, rng)?, draw(u, d.phi_g, rng)?]));
    }
    let mut loced = Vec::new();
    for &year in shape.loced.iter().filter(|&&y| !is_masked_loced_year(y)) {
        let t = shape.index(year)?;
        loced.push(Observation {
            t,
            count: draw(rates.loced_rate[t - 1], d.phi_loced, rng)?,
        });
    }
    let mut pc = Vec::with_capacity(shape.pc.len());
    for &year in &shape.pc {
        let t = shape.index(year)?;
        pc.push(Observation {
            t,
            count: draw(rates.pc_rate[t - 1], d.phi_pc, rng)?,
        });
    }
    let mut ath = Vec::with_capacity(shape.athenaeum.len());
    for &year in &shape.athenaeum {
        let t = shape.index(year)?;
        ath.push(Observation {
            t,
            count: draw(rates.ath_rate[t - 1], d.phi_ath, rng)?,
        });
    }
    let mut ath_gender = Vec::with_capacity(shape.athenaeum_gender.len());
    for &year in &shape.athenaeum_gender {
        let t = shape.index(year)?;
        let (m, w, u) = rates.gender_category_rates(t);
        let a = params.pi_a;
        ath_gender.push(gender_obs(
            t,
            [draw(a * m, d.phi_g, rng)?, draw(a * w, d.phi_g, rng)?, draw(a * u, d.phi_g, rng)?],
        ));
    }

    let wrap = |v: Vec<Observation>| (!v.is_empty()).then_some(v);
    let wrap_g = |v: Vec<GenderObservation>| (!v.is_empty()).then_some(v);
    data.rfgs_total = wrap(totals);
    data.rfgs_gender = wrap_g(gender);
    data.loced = wrap(loced);
    data.pc = wrap(pc);
    data.athenaeum = wrap(ath);
    data.athenaeum_gender = wrap_g(ath_gender);
    data.elicited = shape.elicited.clone();
    Ok(data)
}
