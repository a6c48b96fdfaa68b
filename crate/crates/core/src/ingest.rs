//! Loading, validation, masking and alignment of the observational series.
//!
//! All input tables are small CSV files (see the README for the exact
//! headers). Loaders validate as they parse and report the offending line
//! on failure. [`align`] then maps calendar years onto the model's 1-based
//! time index, where index 1 is the first year of the window (1800).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elicit::{ElicitedPrior, ElicitedQuartiles};
use crate::error::{Error, Result};

/// First calendar year covered by any input.
pub const EARLIEST_YEAR: i32 = 1789;
/// Calendar year mapped to time index 1.
pub const YEAR_ORIGIN: i32 = 1800;
/// Default number of modelled years (1800..=1919).
pub const DEFAULT_HORIZON: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceId {
    RfgsTotal,
    RfgsGender,
    Loced,
    Pc,
    Athenaeum,
}

/// Year-indexed non-negative counts from one source. Years strictly increase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    source: SourceId,
    entries: Vec<(i32, u64)>,
}

impl CountSeries {
    pub fn new(source: SourceId, entries: Vec<(i32, u64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::DuplicateYear {
                    path: PathBuf::from("<memory>"),
                    year: w[1].0,
                    line: 0,
                });
            }
        }
        Ok(Self { source, entries })
    }

    pub fn empty(source: SourceId) -> Self {
        Self {
            source,
            entries: Vec::new(),
        }
    }

    pub fn source(&self) -> SourceId {
        self.source
    }

    pub fn entries(&self) -> &[(i32, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        self.entries.iter().map(|&(y, _)| y)
    }

    pub fn get(&self, year: i32) -> Option<u64> {
        self.entries
            .binary_search_by_key(&year, |&(y, _)| y)
            .ok()
            .map(|i| self.entries[i].1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderCountRow {
    pub year: i32,
    pub men: u64,
    pub women: u64,
    pub unknown: u64,
}

impl GenderCountRow {
    pub fn total(&self) -> u64 {
        self.men + self.women + self.unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationSeries {
    entries: Vec<(i32, u64)>,
}

impl PopulationSeries {
    pub fn new(entries: Vec<(i32, u64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::DuplicateYear {
                    path: PathBuf::from("<memory>"),
                    year: w[1].0,
                    line: 0,
                });
            }
        }
        if let Some(&(year, _)) = entries.iter().find(|&&(_, p)| p == 0) {
            return Err(Error::Domain(format!("population for {year} must be positive")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(i32, u64)] {
        &self.entries
    }

    pub fn get(&self, year: i32) -> Option<u64> {
        self.entries
            .binary_search_by_key(&year, |&(y, _)| y)
            .ok()
            .map(|i| self.entries[i].1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenderLabel {
    #[serde(rename = "M")]
    Man,
    #[serde(rename = "F")]
    Woman,
    #[serde(rename = "U")]
    Unknown,
}

/// One row of the titles table, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTitle {
    pub year: i32,
    pub gender: GenderLabel,
    pub title: String,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got.is_empty() || (got.len() == 1 && got[0].is_empty()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if got != expected {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| malformed(path, line, format!("field `{name}` has invalid value `{raw}`")))
}

/// Read rows as (line number, fields), checking the header and column count.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = open_csv(path)?;
    check_header(path, &mut rdr, header)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(malformed(path, line, e.to_string()));
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(malformed(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(rows)
}

fn parse_count(path: &Path, line: usize, name: &str, raw: &str) -> Result<u64> {
    if raw.starts_with('-') {
        return Err(malformed(path, line, format!("field `{name}` is negative: `{raw}`")));
    }
    parse_field(path, line, name, raw)
}

fn ensure_increasing(path: &Path, rows: &[(usize, i32)]) -> Result<()> {
    for w in rows.windows(2) {
        let (_, prev) = w[0];
        let (line, year) = w[1];
        if year == prev {
            return Err(Error::DuplicateYear {
                path: path.to_path_buf(),
                year,
                line,
            });
        }
        if year < prev {
            return Err(malformed(path, line, format!("year {year} follows {prev}; years must increase")));
        }
    }
    Ok(())
}

/// Load a `year,count` CSV.
pub fn load_count_series(path: impl AsRef<Path>, source: SourceId) -> Result<CountSeries> {
    let path = path.as_ref();
    let rows = read_rows(path, &["year", "count"])?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let year: i32 = parse_field(path, *line, "year", &rec[0])?;
        let count = parse_count(path, *line, "count", &rec[1])?;
        entries.push((year, count));
        lines.push((*line, year));
    }
    ensure_increasing(path, &lines)?;
    Ok(CountSeries {
        source,
        entries,
    })
}

/// Load a `year,count` CSV whose counts may be fractional, flooring each value.
pub fn load_fractional_series(path: impl AsRef<Path>, source: SourceId) -> Result<CountSeries> {
    let path = path.as_ref();
    let rows = read_rows(path, &["year", "count"])?;
    let mut years = Vec::with_capacity(rows.len());
    let mut raw = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let year: i32 = parse_field(path, *line, "year", &rec[0])?;
        let value: f64 = parse_field(path, *line, "count", &rec[1])?;
        if !value.is_finite() || value < 0.0 {
            return Err(malformed(path, *line, format!("count must be a non-negative number, got {value}")));
        }
        years.push((*line, year));
        raw.push(value);
    }
    ensure_increasing(path, &years)?;
    let counts = round_down_fractional(&raw)?;
    Ok(CountSeries {
        source,
        entries: years.into_iter().map(|(_, y)| y).zip(counts).collect(),
    })
}

/// Load a `year,men,women,unknown` CSV.
pub fn load_gender_rows(path: impl AsRef<Path>) -> Result<Vec<GenderCountRow>> {
    let path = path.as_ref();
    let rows = read_rows(path, &["year", "men", "women", "unknown"])?;
    let mut out = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let year: i32 = parse_field(path, *line, "year", &rec[0])?;
        out.push(GenderCountRow {
            year,
            men: parse_count(path, *line, "men", &rec[1])?,
            women: parse_count(path, *line, "women", &rec[2])?,
            unknown: parse_count(path, *line, "unknown", &rec[3])?,
        });
        lines.push((*line, year));
    }
    ensure_increasing(path, &lines)?;
    Ok(out)
}

/// Load a `year,persons` CSV.
pub fn load_population(path: impl AsRef<Path>) -> Result<PopulationSeries> {
    let path = path.as_ref();
    let rows = read_rows(path, &["year", "persons"])?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let year: i32 = parse_field(path, *line, "year", &rec[0])?;
        let persons: u64 = parse_count(path, *line, "persons", &rec[1])?;
        if persons == 0 {
            return Err(malformed(path, *line, "persons must be positive"));
        }
        entries.push((year, persons));
        lines.push((*line, year));
    }
    ensure_increasing(path, &lines)?;
    Ok(PopulationSeries { entries })
}

/// Load a `year,gender,title` CSV. Gender codes are `M`, `F` and `U`.
pub fn load_titles(path: impl AsRef<Path>) -> Result<Vec<RawTitle>> {
    let path = path.as_ref();
    let rows = read_rows(path, &["year", "gender", "title"])?;
    rows.iter()
        .map(|(line, rec)| {
            let year: i32 = parse_field(path, *line, "year", &rec[0])?;
            let gender = match &rec[1] {
                "M" => GenderLabel::Man,
                "F" => GenderLabel::Woman,
                "U" => GenderLabel::Unknown,
                other => return Err(malformed(path, *line, format!("unknown gender code `{other}`"))),
            };
            Ok(RawTitle {
                year,
                gender,
                title: rec[2].to_string(),
            })
        })
        .collect()
}

/// Load the elicited-quartiles JSON array.
pub fn load_elicited(path: impl AsRef<Path>) -> Result<Vec<ElicitedQuartiles>> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let items: Vec<ElicitedQuartiles> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    for q in &items {
        q.validate()?;
    }
    Ok(items)
}

/// Drop every LOCED observation from a year ending in 0 or 5.
///
/// Those years mix dated and undated material in the source catalogue.
pub fn mask_loced(series: &CountSeries) -> Result<CountSeries> {
    if series.source != SourceId::Loced {
        return Err(Error::WrongSource {
            expected: SourceId::Loced,
            actual: series.source,
        });
    }
    Ok(CountSeries {
        source: SourceId::Loced,
        entries: series
            .entries
            .iter()
            .copied()
            .filter(|&(year, _)| !is_masked_loced_year(year))
            .collect(),
    })
}

pub fn is_masked_loced_year(year: i32) -> bool {
    year.rem_euclid(5) == 0
}

pub fn round_down_fractional(raw: &[f64]) -> Result<Vec<u64>> {
    raw.iter()
        .map(|&v| {
            if v < 0.0 || v.is_nan() {
                Err(Error::NegativeValue(v))
            } else {
                Ok(v.floor() as u64)
            }
        })
        .collect()
}

/// A count observed at 1-based time index `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub count: u64,
}

/// Gender counts observed at 1-based time index `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderObservation {
    pub t: usize,
    pub men: u64,
    pub women: u64,
    pub unknown: u64,
}

/// Per-year annotated sample for the years before the modelled window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlySampleRow {
    pub year: i32,
    pub men: u64,
    pub women: u64,
    pub unknown: u64,
}

/// Unaligned inputs. Every source is optional.
#[derive(Debug, Clone, Default)]
pub struct DatasetParts {
    pub horizon: Option<usize>,
    pub rfgs_total: Option<CountSeries>,
    pub rfgs_gender: Option<Vec<GenderCountRow>>,
    pub loced: Option<CountSeries>,
    pub pc: Option<CountSeries>,
    pub athenaeum: Option<CountSeries>,
    pub athenaeum_gender: Option<Vec<GenderCountRow>>,
    pub population: Option<PopulationSeries>,
    pub elicited: Vec<ElicitedPrior>,
    pub early_samples: Vec<EarlySampleRow>,
}

/// Elicited prior anchored at a time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredPrior {
    pub t: usize,
    pub prior: ElicitedPrior,
}

/// Immutable, index-aligned view of all inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedDataset {
    pub year_origin: i32,
    pub horizon: usize,
    pub rfgs_total: Option<Vec<Observation>>,
    pub rfgs_gender: Option<Vec<GenderObservation>>,
    pub loced: Option<Vec<Observation>>,
    pub pc: Option<Vec<Observation>>,
    pub athenaeum: Option<Vec<Observation>>,
    pub athenaeum_gender: Option<Vec<GenderObservation>>,
    pub population: Option<PopulationSeries>,
    pub elicited: Vec<AnchoredPrior>,
    /// RFGS totals for years before the origin (1789..1799).
    pub early_totals: Vec<(i32, u64)>,
    pub early_samples: Vec<EarlySampleRow>,
}

impl AlignedDataset {
    pub fn year_of(&self, t: usize) -> i32 {
        self.year_origin + t as i32 - 1
    }

    pub fn index_of(&self, year: i32) -> Option<usize> {
        let t = year - self.year_origin + 1;
        (t >= 1 && t as usize <= self.horizon).then_some(t as usize)
    }

    pub fn last_year(&self) -> i32 {
        self.year_of(self.horizon)
    }

    /// A dataset with no observations over `horizon` years.
    pub fn empty(horizon: usize) -> Self {
        Self {
            year_origin: YEAR_ORIGIN,
            horizon,
            rfgs_total: None,
            rfgs_gender: None,
            loced: None,
            pc: None,
            athenaeum: None,
            athenaeum_gender: None,
            population: None,
            elicited: Vec::new(),
            early_totals: Vec::new(),
            early_samples: Vec::new(),
        }
    }

    /// Known RFGS total for a calendar year, inside or before the window.
    pub fn known_total(&self, year: i32) -> Option<u64> {
        if year < self.year_origin {
            return self
                .early_totals
                .iter()
                .find(|&&(y, _)| y == year)
                .map(|&(_, c)| c);
        }
        let t = self.index_of(year)?;
        self.rfgs_total
            .as_ref()?
            .iter()
            .find(|o| o.t == t)
            .map(|o| o.count)
    }

    pub fn known_gender(&self, year: i32) -> Option<GenderObservation> {
        let t = self.index_of(year)?;
        self.rfgs_gender.as_ref()?.iter().find(|o| o.t == t).copied()
    }
}

fn index_in_window(year: i32, horizon: usize) -> Result<usize> {
    let end = YEAR_ORIGIN + horizon as i32 - 1;
    if year < YEAR_ORIGIN || year > end {
        return Err(Error::YearOutOfWindow {
            year,
            start: YEAR_ORIGIN,
            end,
        });
    }
    Ok((year - YEAR_ORIGIN + 1) as usize)
}

fn align_counts(series: &CountSeries, horizon: usize) -> Result<Vec<Observation>> {
    series
        .entries()
        .iter()
        .map(|&(year, count)| {
            Ok(Observation {
                t: index_in_window(year, horizon)?,
                count,
            })
        })
        .collect()
}

fn align_gender(what: &str, rows: &[GenderCountRow], horizon: usize) -> Result<Vec<GenderObservation>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let t = index_in_window(row.year, horizon)?;
        if seen.insert(t, ()).is_some() {
            return Err(Error::IndexCollision {
                what: what.to_string(),
                index: t,
            });
        }
        out.push(GenderObservation {
            t,
            men: row.men,
            women: row.women,
            unknown: row.unknown,
        });
    }
    out.sort_by_key(|o| o.t);
    Ok(out)
}

/// Map every observation onto the 1-based time index.
///
/// LOCED series must already be masked. RFGS totals before the origin year
/// are split off into `early_totals`.
pub fn align(parts: DatasetParts) -> Result<AlignedDataset> {
    let horizon = parts.horizon.unwrap_or(DEFAULT_HORIZON);
    if horizon == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let end = YEAR_ORIGIN + horizon as i32 - 1;

    let mut early_totals = Vec::new();
    let rfgs_total = match &parts.rfgs_total {
        Some(series) => {
            let (early, window): (Vec<_>, Vec<_>) =
                series.entries().iter().partition(|&&(y, _)| y < YEAR_ORIGIN);
            for &(year, count) in &early {
                if year < EARLIEST_YEAR {
                    return Err(Error::YearOutOfWindow {
                        year,
                        start: EARLIEST_YEAR,
                        end,
                    });
                }
                early_totals.push((year, count));
            }
            let within = CountSeries {
                source: series.source,
                entries: window,
            };
            Some(align_counts(&within, horizon)?)
        }
        None => None,
    };

    let loced = match &parts.loced {
        Some(series) => {
            if let Some(year) = series.years().find(|&y| is_masked_loced_year(y)) {
                return Err(Error::Domain(format!(
                    "LOCED year {year} must be masked before alignment"
                )));
            }
            Some(align_counts(series, horizon)?)
        }
        None => None,
    };
    let pc = parts.pc.as_ref().map(|s| align_counts(s, horizon)).transpose()?;
    let athenaeum = parts
        .athenaeum
        .as_ref()
        .map(|s| align_counts(s, horizon))
        .transpose()?;

    let rfgs_gender = parts
        .rfgs_gender
        .as_ref()
        .map(|rows| align_gender("RFGS gender", rows, horizon))
        .transpose()?;
    let athenaeum_gender = parts
        .athenaeum_gender
        .as_ref()
        .map(|rows| align_gender("Athenaeum gender", rows, horizon))
        .transpose()?;

    let mut elicited = Vec::with_capacity(parts.elicited.len());
    let mut seen = BTreeMap::new();
    for prior in parts.elicited {
        let t = index_in_window(prior.year, horizon)?;
        if seen.insert(t, ()).is_some() {
            return Err(Error::IndexCollision {
                what: "elicited priors".into(),
                index: t,
            });
        }
        elicited.push(AnchoredPrior { t, prior });
    }
    elicited.sort_by_key(|a| a.t);

    let mut early_samples = parts.early_samples;
    for row in &early_samples {
        if row.year < EARLIEST_YEAR || row.year >= YEAR_ORIGIN {
            return Err(Error::YearOutOfWindow {
                year: row.year,
                start: EARLIEST_YEAR,
                end: YEAR_ORIGIN - 1,
            });
        }
    }
    early_samples.sort_by_key(|r| r.year);
    for w in early_samples.windows(2) {
        if w[0].year == w[1].year {
            return Err(Error::IndexCollision {
                what: "early samples".into(),
                index: (w[1].year - EARLIEST_YEAR) as usize,
            });
        }
    }

    Ok(AlignedDataset {
        year_origin: YEAR_ORIGIN,
        horizon,
        rfgs_total,
        rfgs_gender,
        loced,
        pc,
        athenaeum,
        athenaeum_gender,
        population: parts.population,
        elicited,
        early_totals,
        early_samples,
    })
}

/// Load a `year,men,women,unknown` annotated-sample CSV for 1789..1799.
pub fn load_early_samples(path: impl AsRef<Path>) -> Result<Vec<EarlySampleRow>> {
    Ok(load_gender_rows(path)?
        .into_iter()
        .map(|r| EarlySampleRow {
            year: r.year,
            men: r.men,
            women: r.women,
            unknown: r.unknown,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn series(source: SourceId, entries: &[(i32, u64)]) -> CountSeries {
        CountSeries::new(source, entries.to_vec()).unwrap()
    }

    #[test]
    fn loads_simple_series() {
        let f = write_tmp("year,count\n1801,5\n1802,7\n");
        let s = load_count_series(f.path(), SourceId::RfgsTotal).unwrap();
        assert_eq!(s.entries(), &[(1801, 5), (1802, 7)]);
    }

    #[test]
    fn negative_count_is_malformed_with_line() {
        let f = write_tmp("year,count\n1800,2\n1801,-3\n");
        match load_count_series(f.path(), SourceId::RfgsTotal) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fractional_count_is_malformed() {
        let f = write_tmp("year,count\n1801,7.5\n");
        assert!(matches!(
            load_count_series(f.path(), SourceId::Athenaeum),
            Err(Error::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_year_rejected() {
        let f = write_tmp("year,count\n1801,1\n1801,2\n");
        assert!(matches!(
            load_count_series(f.path(), SourceId::Pc),
            Err(Error::DuplicateYear { year: 1801, line: 3, .. })
        ));
    }

    #[test]
    fn empty_file_rejected() {
        let f = write_tmp("");
        assert!(matches!(
            load_count_series(f.path(), SourceId::Pc),
            Err(Error::EmptyFile(_))
        ));
        let f = write_tmp("year,count\n");
        assert!(matches!(
            load_count_series(f.path(), SourceId::Pc),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn athenaeum_values_load_unchanged() {
        let f = write_tmp("year,count\n1860,137\n1900,473\n");
        let s = load_count_series(f.path(), SourceId::Athenaeum).unwrap();
        assert_eq!(s.get(1860), Some(137));
        assert_eq!(s.get(1900), Some(473));
    }

    #[test]
    fn fractional_loader_floors() {
        let f = write_tmp("year,count\n1860,137.5\n1865,12.9\n");
        let s = load_fractional_series(f.path(), SourceId::Athenaeum).unwrap();
        assert_eq!(s.entries(), &[(1860, 137), (1865, 12)]);
    }

    #[test]
    fn mask_first_decade() {
        let s = series(SourceId::Loced, &(1801..=1810).map(|y| (y, 3)).collect::<Vec<_>>());
        let m = mask_loced(&s).unwrap();
        assert_eq!(
            m.years().collect::<Vec<_>>(),
            vec![1801, 1802, 1803, 1804, 1806, 1807, 1808, 1809]
        );
    }

    #[test]
    fn mask_empty_and_full_span() {
        assert!(mask_loced(&CountSeries::empty(SourceId::Loced)).unwrap().is_empty());
        let s = series(SourceId::Loced, &(1801..=1870).map(|y| (y, 1)).collect::<Vec<_>>());
        assert_eq!(s.len(), 70);
        // 1805, 1810, ..., 1870 are the 14 masked years.
        let masked: Vec<i32> = (1801..=1870).filter(|y| y % 5 == 0).collect();
        assert_eq!(masked.len(), 14);
        assert_eq!(mask_loced(&s).unwrap().len(), 56);
    }

    #[test]
    fn mask_wrong_source() {
        let s = series(SourceId::Pc, &[(1850, 1)]);
        assert!(matches!(mask_loced(&s), Err(Error::WrongSource { .. })));
    }

    #[test]
    fn round_down() {
        assert_eq!(round_down_fractional(&[12.5, 7.0, 0.9]).unwrap(), vec![12, 7, 0]);
        assert!(matches!(
            round_down_fractional(&[1.0, -0.5]),
            Err(Error::NegativeValue(_))
        ));
    }

    #[test]
    fn align_indices() {
        let parts = DatasetParts {
            rfgs_total: Some(series(SourceId::RfgsTotal, &[(1795, 70), (1800, 80), (1836, 100)])),
            ..Default::default()
        };
        let d = align(parts).unwrap();
        let obs = d.rfgs_total.as_ref().unwrap();
        assert_eq!(obs[0], Observation { t: 1, count: 80 });
        assert_eq!(obs[1], Observation { t: 37, count: 100 });
        assert_eq!(d.early_totals, vec![(1795, 70)]);
        assert_eq!(d.known_total(1795), Some(70));
        assert_eq!(d.year_of(37), 1836);
    }

    #[test]
    fn align_rejects_out_of_window() {
        let parts = DatasetParts {
            pc: Some(series(SourceId::Pc, &[(1925, 1)])),
            ..Default::default()
        };
        assert!(matches!(
            align(parts),
            Err(Error::YearOutOfWindow { year: 1925, .. })
        ));
    }

    #[test]
    fn align_rejects_unmasked_loced() {
        let parts = DatasetParts {
            loced: Some(series(SourceId::Loced, &[(1805, 1)])),
            ..Default::default()
        };
        assert!(align(parts).is_err());
    }

    #[test]
    fn align_gender_collision() {
        let row = GenderCountRow {
            year: 1860,
            men: 1,
            women: 1,
            unknown: 0,
        };
        let parts = DatasetParts {
            athenaeum_gender: Some(vec![row, row]),
            ..Default::default()
        };
        assert!(matches!(align(parts), Err(Error::IndexCollision { .. })));
    }

    #[test]
    fn titles_and_population_load() {
        let f = write_tmp("year,gender,title\n1826,M,\"WILLIAM DOUGLAS; OR, THE SCOTTISH EXILES\"\n1827,F,Emma\n");
        let t = load_titles(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].gender, GenderLabel::Man);
        assert_eq!(t[0].title, "WILLIAM DOUGLAS; OR, THE SCOTTISH EXILES");
        let f = write_tmp("year,gender,title\n1826,X,foo\n");
        assert!(matches!(load_titles(f.path()), Err(Error::MalformedRow { line: 2, .. })));

        let f = write_tmp("year,persons\n1850,27000000\n1851,0\n");
        assert!(matches!(load_population(f.path()), Err(Error::MalformedRow { line: 3, .. })));
    }

    fn arb_series() -> impl Strategy<Value = CountSeries> {
        prop::collection::btree_map(1789i32..1920, 0u64..5000, 0..80).prop_map(|m| CountSeries {
            source: SourceId::Loced,
            entries: m.into_iter().collect(),
        })
    }

    proptest! {
        #[test]
        fn mask_is_idempotent_filter(s in arb_series()) {
            let once = mask_loced(&s).unwrap();
            let twice = mask_loced(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            for e in once.entries() {
                prop_assert!(s.entries().contains(e));
                prop_assert!(e.0 % 5 != 0);
            }
        }

        #[test]
        fn align_is_deterministic(s in arb_series()) {
            let masked = mask_loced(&s).unwrap();
            let masked = CountSeries {
                source: SourceId::Loced,
                entries: masked.entries().iter().copied().filter(|&(y, _)| y >= YEAR_ORIGIN).collect(),
            };
            let make = || DatasetParts { loced: Some(masked.clone()), ..Default::default() };
            let a = serde_json::to_vec(&align(make()).unwrap()).unwrap();
            let b = serde_json::to_vec(&align(make()).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
