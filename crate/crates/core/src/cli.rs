//! Command-line surface: one subcommand per pipeline, configured by a JSON
//! [`RunConfig`] and a seed that fixes every stochastic output.
//!
//! Exit codes: 0 on success, 1 on error (message on stderr), 2 when a fit ran
//! but is statistically suspect.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig, TitleRecord};
use crate::early_gender::{self, DirichletPrior, EarlyYearSample};
use crate::elicit::{elicit_gamma_log, elicit_normal, ElicitedPrior, ElicitedQuartiles, FitObjective};
use crate::error::{Error, Result};
use crate::gp::{LatentGP, SEKernel};
use crate::ingest::{
    self, AlignedDataset, AnchoredPrior, DatasetParts, GenderObservation, Observation, SourceId, EARLIEST_YEAR,
    YEAR_ORIGIN,
};
use crate::model::{self, DataShape, Dispersions, ModelConfig, ModelParams, ProductionModel};
use crate::report::{self, EarlyGender, YearDraws, PROBS};
use crate::sampler::{self, Diagnostics, HmcConfig, PosteriorDraws};

/// Largest split R-hat a fit may report before it is flagged.
pub const MAX_RHAT: f64 = 1.05;
/// Largest fraction of divergent retained transitions before a fit is flagged.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.01;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_SUSPECT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "novelrates", version, about = "Latent publication-rate estimation and title-word gender classification")]
pub struct Cli {
    /// Run configuration (JSON). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for chains and folds; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the posterior; writes draws.csv and diagnostics.json.
    Fit,
    /// Summarize draws; writes summary, decade, growth and total tables plus SVG plots.
    Summarize {
        /// Draws CSV written by `fit` (default: <out>/draws.csv).
        #[arg(long, value_name = "FILE")]
        draws: Option<PathBuf>,
    },
    /// Simulate a dataset from a parameter file; writes source CSVs, truth.json and fit_config.json.
    Simulate {
        /// Simulation parameters (JSON).
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
    },
    /// Fit Normal and log-scale Gamma priors to elicited quartiles.
    ElicitMatch {
        /// Elicited quartiles (JSON array).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Result JSON (default: <out>/elicited_fits.json).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Leave-one-out evaluation of the title-word classifier.
    Classify {
        /// Titles CSV; overrides the configured one.
        #[arg(long, value_name = "FILE")]
        titles: Option<PathBuf>,
    },
    /// Gender-count intervals for the years before 1800.
    EarlyGender {
        /// Annotated sample CSV; overrides the configured one.
        #[arg(long, value_name = "FILE")]
        samples: Option<PathBuf>,
        /// Totals CSV (`year,count`); overrides the configured RFGS totals.
        #[arg(long, value_name = "FILE")]
        totals: Option<PathBuf>,
    },
}

/// Input files. Every source is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub rfgs_total: Option<PathBuf>,
    pub rfgs_gender: Option<PathBuf>,
    /// Unmasked; years ending in 0 or 5 are dropped on load.
    pub loced: Option<PathBuf>,
    pub pc: Option<PathBuf>,
    /// Chart readings; fractional values are floored on load.
    pub athenaeum: Option<PathBuf>,
    pub athenaeum_gender: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub elicited: Option<PathBuf>,
    pub early_samples: Option<PathBuf>,
    pub titles: Option<PathBuf>,
}

impl InputPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.rfgs_total,
            &mut self.rfgs_gender,
            &mut self.loced,
            &mut self.pc,
            &mut self.athenaeum,
            &mut self.athenaeum_gender,
            &mut self.population,
            &mut self.elicited,
            &mut self.early_samples,
            &mut self.titles,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyGenderConfig {
    /// Prior pseudo-count total.
    pub strength: f64,
    /// Prior centre; taken from the 1800 RFGS gender row when absent.
    pub p1800: Option<[f64; 3]>,
    pub draws: usize,
}

impl Default for EarlyGenderConfig {
    fn default() -> Self {
        Self {
            strength: early_gender::DEFAULT_STRENGTH,
            p1800: None,
            draws: 4000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitationConfig {
    pub objective: FitObjective,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Inclusive (start, end) spans for average annual growth; empty means the whole run of years.
    pub growth_spans: Vec<(i32, i32)>,
    /// Inclusive (start, end) spans for draw-wise totals; empty means the longest run ending at the last year.
    pub total_spans: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub model: ModelConfig,
    /// Its `seed` is replaced by the run seed.
    pub hmc: HmcConfig,
    pub classifier: ClassifierConfig,
    pub early_gender: EarlyGenderConfig,
    pub elicitation: ElicitationConfig,
    pub report: ReportConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            model: ModelConfig::default(),
            hmc: HmcConfig::default(),
            classifier: ClassifierConfig::default(),
            early_gender: EarlyGenderConfig::default(),
            elicitation: ElicitationConfig::default(),
            report: ReportConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Read a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.inputs.resolve(base);
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }
}

/// How a command finished when it did not fail.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok,
    /// Ran to completion, but the result should not be trusted.
    Suspect(Vec<String>),
}

/// Parse arguments, run, and map the result to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::Suspect(reasons)) => {
            for r in reasons {
                eprintln!("warning: {r}");
            }
            EXIT_SUSPECT
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Run a parsed command inside a pool of `--threads` workers.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.hmc.seed = config.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
        match &cli.command {
            Command::Fit => cmd_fit(&config),
            Command::Summarize { draws } => cmd_summarize(&config, draws.as_deref()),
            Command::Simulate { params } => cmd_simulate(&config, params),
            Command::ElicitMatch { input, output } => cmd_elicit_match(&config, input, output.as_deref()),
            Command::Classify { titles } => cmd_classify(&config, titles.as_deref()),
            Command::EarlyGender { samples, totals } => cmd_early_gender(&config, samples.as_deref(), totals.as_deref()),
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{json}").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Load, mask and align every configured input.
pub fn load_dataset(config: &RunConfig) -> Result<AlignedDataset> {
    let inputs = &config.inputs;
    let objective = config.elicitation.objective;
    let elicited = match &inputs.elicited {
        Some(p) => ingest::load_elicited(p)?
            .iter()
            .map(|q| elicit_gamma_log(q, objective))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let parts = DatasetParts {
        horizon: Some(config.model.horizon),
        rfgs_total: inputs
            .rfgs_total
            .as_ref()
            .map(|p| ingest::load_count_series(p, SourceId::RfgsTotal))
            .transpose()?,
        rfgs_gender: inputs.rfgs_gender.as_ref().map(ingest::load_gender_rows).transpose()?,
        loced: inputs
            .loced
            .as_ref()
            .map(|p| ingest::load_count_series(p, SourceId::Loced).and_then(|s| ingest::mask_loced(&s)))
            .transpose()?,
        pc: inputs
            .pc
            .as_ref()
            .map(|p| ingest::load_count_series(p, SourceId::Pc))
            .transpose()?,
        athenaeum: inputs
            .athenaeum
            .as_ref()
            .map(|p| ingest::load_fractional_series(p, SourceId::Athenaeum))
            .transpose()?,
        athenaeum_gender: inputs.athenaeum_gender.as_ref().map(ingest::load_gender_rows).transpose()?,
        population: inputs.population.as_ref().map(ingest::load_population).transpose()?,
        elicited,
        early_samples: inputs
            .early_samples
            .as_ref()
            .map(ingest::load_early_samples)
            .transpose()?
            .unwrap_or_default(),
    };
    ingest::align(parts)
}

/// What `fit` records besides the per-parameter diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub status: String,
    pub reasons: Vec<String>,
    pub seed: u64,
    /// Null when R-hat is unavailable or infinite.
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub divergent_count: usize,
    pub divergent_fraction: f64,
    pub warmup_divergent: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub total_draws: usize,
    /// Per unconstrained coordinate; absent when chains are too short.
    pub diagnostics: Option<Diagnostics>,
}

/// Reasons a fit should not be trusted, empty when it passes.
pub fn gate(draws: &PosteriorDraws, diagnostics: Option<&Diagnostics>) -> Vec<String> {
    let mut reasons = Vec::new();
    let fraction = draws.divergent_count() as f64 / draws.total_draws().max(1) as f64;
    if fraction > MAX_DIVERGENT_FRACTION {
        reasons.push(format!(
            "{} of {} retained transitions diverged ({:.2}%)",
            draws.divergent_count(),
            draws.total_draws(),
            100.0 * fraction
        ));
    }
    if let Some(d) = diagnostics {
        let rhat = d.max_rhat();
        if !(rhat <= MAX_RHAT) {
            let worst = (0..d.split_rhat.len())
                .max_by(|&i, &j| d.split_rhat[i].total_cmp(&d.split_rhat[j]))
                .and_then(|i| d.names.get(i).cloned())
                .unwrap_or_default();
            reasons.push(format!("max split R-hat {rhat:.4} exceeds {MAX_RHAT} ({worst})"));
        }
    }
    reasons
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn cmd_fit(config: &RunConfig) -> Result<Outcome> {
    let data = load_dataset(config)?;
    let model = ProductionModel::new(config.model.clone(), data)?;
    let out = &config.output_dir;
    let report_path = out.join("diagnostics.json");
    let (draws, diagnostics) = match sampler::sample(&model, &config.hmc) {
        Ok(r) => r,
        Err(Error::AllDivergent(n)) => {
            let reason = format!("all {n} transitions diverged; no draws retained");
            write_json(
                &report_path,
                &FitReport {
                    status: "suspect".into(),
                    reasons: vec![reason.clone()],
                    seed: config.seed,
                    max_rhat: None,
                    min_ess_bulk: None,
                    divergent_count: n,
                    divergent_fraction: 1.0,
                    warmup_divergent: Vec::new(),
                    step_sizes: Vec::new(),
                    total_draws: 0,
                    diagnostics: None,
                },
            )?;
            return Ok(Outcome::Suspect(vec![reason]));
        }
        Err(e) => return Err(e),
    };
    let layout = model.layout();
    let diagnostics = diagnostics.map(|d| d.with_names(layout.unconstrained_names()));
    let natural = draws.map(|x| layout.natural(model.config(), x))?;
    natural.write_csv(out.join("draws.csv"), &layout.natural_names())?;

    let reasons = gate(&draws, diagnostics.as_ref());
    let report = FitReport {
        status: if reasons.is_empty() { "ok" } else { "suspect" }.into(),
        reasons: reasons.clone(),
        seed: config.seed,
        max_rhat: diagnostics.as_ref().and_then(|d| finite(d.max_rhat())),
        min_ess_bulk: diagnostics.as_ref().and_then(|d| finite(d.min_ess())),
        divergent_count: draws.divergent_count(),
        divergent_fraction: draws.divergent_count() as f64 / draws.total_draws().max(1) as f64,
        warmup_divergent: draws.warmup_divergent.clone(),
        step_sizes: draws.step_sizes.clone(),
        total_draws: draws.total_draws(),
        diagnostics,
    };
    write_json(&report_path, &report)?;
    Ok(if reasons.is_empty() { Outcome::Ok } else { Outcome::Suspect(reasons) })
}

/// The configured proportions, else the 1800 RFGS gender row.
fn p1800(config: &RunConfig, data: Option<&AlignedDataset>) -> Result<[f64; 3]> {
    if let Some(p) = config.early_gender.p1800 {
        return Ok(p);
    }
    let row = match data {
        Some(d) => d.known_gender(YEAR_ORIGIN),
        None => match &config.inputs.rfgs_gender {
            Some(path) => ingest::load_gender_rows(path)?
                .into_iter()
                .find(|r| r.year == YEAR_ORIGIN)
                .map(|r| GenderObservation {
                    t: 1,
                    men: r.men,
                    women: r.women,
                    unknown: r.unknown,
                }),
            None => None,
        },
    };
    let row = row.ok_or_else(|| {
        Error::Config("early_gender.p1800 is unset and no 1800 RFGS gender row is available".into())
    })?;
    let n = (row.men + row.women + row.unknown) as f64;
    if n == 0.0 {
        return Err(Error::Config("the 1800 RFGS gender row is empty".into()));
    }
    Ok([row.men as f64 / n, row.women as f64 / n, row.unknown as f64 / n])
}

fn early_prior(config: &RunConfig, data: Option<&AlignedDataset>) -> Result<DirichletPrior> {
    early_gender::build_prior(p1800(config, data)?, config.early_gender.strength)
}

/// Years `first..=last` ending at the last summarized year with no gaps.
fn trailing_run(years: &[YearDraws]) -> Option<(i32, i32)> {
    let last = years.iter().map(|y| y.year).max()?;
    let mut first = last;
    while years.iter().any(|y| y.year == first - 1) {
        first -= 1;
    }
    Some((first, last))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpanTotal {
    start: i32,
    end: i32,
    total: report::Quantiles,
}

fn cmd_summarize(config: &RunConfig, draws_path: Option<&Path>) -> Result<Outcome> {
    let out = &config.output_dir;
    let data = load_dataset(config)?;
    let model = ProductionModel::new(config.model.clone(), data)?;
    let default_path = out.join("draws.csv");
    let (natural, names) = PosteriorDraws::read_csv(draws_path.unwrap_or(&default_path))?;
    let layout = model.layout();
    if names != layout.natural_names() {
        return Err(Error::Config(format!(
            "draws columns do not match the configured model ({} columns, expected {})",
            names.len(),
            layout.dimension()
        )));
    }
    let draws = natural.map(|v| model.to_unconstrained(&layout.params_from_natural(v)?))?;
    let data = model.data();
    let early = if data.early_samples.is_empty() || data.early_totals.is_empty() {
        None
    } else {
        Some(EarlyGender {
            prior: early_prior(config, Some(data))?,
            seed: config.seed,
        })
    };
    let years = report::year_draws(&draws, &model, early)?;
    let population = data.population.as_ref();
    let rows = report::summarize(&years, population)?;
    report::write_summary(&out.join("summary.csv"), &rows)?;
    report::write_decades(&out.join("decades.csv"), &report::decade_table(&years)?)?;

    let first = years.iter().map(|y| y.year).min().unwrap_or(YEAR_ORIGIN);
    let last = years.iter().map(|y| y.year).max().unwrap_or(YEAR_ORIGIN);
    let growth_spans = if config.report.growth_spans.is_empty() {
        vec![(first.max(YEAR_ORIGIN), last)]
    } else {
        config.report.growth_spans.clone()
    };
    let growth = growth_spans
        .iter()
        .filter(|(a, b)| b > a)
        .map(|&(a, b)| report::growth_rate(&years, population, a, b))
        .collect::<Result<Vec<_>>>()?;
    report::write_growth(&out.join("growth.csv"), &growth)?;

    let total_spans = if config.report.total_spans.is_empty() {
        trailing_run(&years).into_iter().collect()
    } else {
        config.report.total_spans.clone()
    };
    let totals = total_spans
        .iter()
        .map(|&(start, end)| {
            Ok(SpanTotal {
                start,
                end,
                total: report::span_total(&years, start, end)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_totals(&out.join("totals.csv"), &totals)?;
    report::emit_plots(out, &rows)?;
    Ok(Outcome::Ok)
}

fn write_totals(path: &Path, rows: &[SpanTotal]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["start_year", "end_year", "mean", "q5", "q25", "q50", "q75", "q95"])?;
    for r in rows {
        let mut rec = vec![r.start.to_string(), r.end.to_string()];
        rec.extend(r.total.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trend and kernel of one simulated process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub intercept: f64,
    pub slope: f64,
    pub sigma: f64,
    pub lengthscale: f64,
}

/// Which sources to draw, on the historical schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedSources {
    pub rfgs_total: bool,
    pub rfgs_gender: bool,
    pub loced: bool,
    pub pc: bool,
    pub athenaeum: bool,
    pub athenaeum_gender: bool,
}

impl Default for SimulatedSources {
    fn default() -> Self {
        Self {
            rfgs_total: true,
            rfgs_gender: true,
            loced: true,
            pc: true,
            athenaeum: true,
            athenaeum_gender: true,
        }
    }
}

/// `simulate` input. Innovations are drawn from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: usize,
    pub lambda: ProcessSpec,
    pub nu: ProcessSpec,
    pub rho: ProcessSpec,
    pub men: ProcessSpec,
    pub pi_nu: f64,
    pub pi_a: f64,
    pub dispersions: Dispersions,
    pub sources: SimulatedSources,
    /// Elicited quartiles carried into the generated dataset.
    pub elicited: Vec<ElicitedQuartiles>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        let p = |intercept, slope, lengthscale| ProcessSpec {
            intercept,
            slope,
            sigma: 0.3,
            lengthscale,
        };
        Self {
            horizon: ingest::DEFAULT_HORIZON,
            lambda: p(80f64.ln(), 0.03, 6.0),
            nu: p(-2.5, 0.005, 15.0),
            rho: p(-1.2, 0.0, 15.0),
            men: p(0.2, -0.01, 15.0),
            pi_nu: 1.6,
            pi_a: 0.4,
            dispersions: Dispersions::uniform(20.0),
            sources: SimulatedSources::default(),
            elicited: Vec::new(),
        }
    }
}

impl SimulationSpec {
    /// Parameters with standard-normal innovations drawn from `rng`.
    pub fn params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams> {
        let mut gp = |p: &ProcessSpec| -> Result<LatentGP> {
            Ok(LatentGP {
                mean_intercept: p.intercept,
                mean_slope: p.slope,
                kernel: SEKernel::new(p.sigma, p.lengthscale)?,
                whitened: (0..self.horizon).map(|_| rng.sample(StandardNormal)).collect(),
            })
        };
        let params = ModelParams {
            lambda_gp: gp(&self.lambda)?,
            nu_gp: gp(&self.nu)?,
            rho_gp: gp(&self.rho)?,
            men_gp: gp(&self.men)?,
            pi_nu: self.pi_nu,
            pi_a: self.pi_a,
            dispersions: self.dispersions,
        };
        params.validate()?;
        Ok(params)
    }

    /// The historical schedule restricted to the enabled sources.
    pub fn shape(&self, objective: FitObjective) -> Result<DataShape> {
        let mut shape = DataShape::standard(self.horizon);
        let s = self.sources;
        for (on, years) in [
            (s.rfgs_total, &mut shape.rfgs_total),
            (s.rfgs_gender, &mut shape.rfgs_gender),
            (s.loced, &mut shape.loced),
            (s.pc, &mut shape.pc),
            (s.athenaeum, &mut shape.athenaeum),
            (s.athenaeum_gender, &mut shape.athenaeum_gender),
        ] {
            if !on {
                years.clear();
            }
        }
        let last = YEAR_ORIGIN + self.horizon as i32 - 1;
        shape.elicited = self
            .elicited
            .iter()
            .filter(|q| (YEAR_ORIGIN..=last).contains(&q.year))
            .map(|q| {
                Ok(AnchoredPrior {
                    t: (q.year - YEAR_ORIGIN + 1) as usize,
                    prior: elicit_gamma_log(q, objective)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(shape)
    }
}

/// `simulate` output alongside the data: the parameters and their realized paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub seed: u64,
    pub params: ModelParams,
    pub years: Vec<i32>,
    pub lambda: Vec<f64>,
    pub novel_rate: Vec<f64>,
}

fn write_counts(path: &Path, data: &AlignedDataset, obs: &[Observation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["year", "count"])?;
    for o in obs {
        w.write_record([data.year_of(o.t).to_string(), o.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_gender(path: &Path, data: &AlignedDataset, obs: &[GenderObservation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["year", "men", "women", "unknown"])?;
    for o in obs {
        w.write_record([
            data.year_of(o.t).to_string(),
            o.men.to_string(),
            o.women.to_string(),
            o.unknown.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_simulate(config: &RunConfig, spec_path: &Path) -> Result<Outcome> {
    let spec: SimulationSpec = read_json(spec_path)?;
    if spec.horizon == 0 {
        return Err(Error::Config("simulation horizon must be positive".into()));
    }
    let out = &config.output_dir;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = spec.params(&mut rng)?;
    let shape = spec.shape(config.elicitation.objective)?;
    let data = model::simulate(&params, config.model.jitter, &shape, &mut rng)?;

    let mut inputs = InputPaths::default();
    let counts = [
        ("rfgs_total.csv", &data.rfgs_total, &mut inputs.rfgs_total),
        ("loced.csv", &data.loced, &mut inputs.loced),
        ("pc.csv", &data.pc, &mut inputs.pc),
        ("athenaeum.csv", &data.athenaeum, &mut inputs.athenaeum),
    ];
    for (name, obs, slot) in counts {
        if let Some(obs) = obs {
            write_counts(&out.join(name), &data, obs)?;
            *slot = Some(PathBuf::from(name));
        }
    }
    let genders = [
        ("rfgs_gender.csv", &data.rfgs_gender, &mut inputs.rfgs_gender),
        ("athenaeum_gender.csv", &data.athenaeum_gender, &mut inputs.athenaeum_gender),
    ];
    for (name, obs, slot) in genders {
        if let Some(obs) = obs {
            write_gender(&out.join(name), &data, obs)?;
            *slot = Some(PathBuf::from(name));
        }
    }
    let last = YEAR_ORIGIN + spec.horizon as i32 - 1;
    let elicited: Vec<&ElicitedQuartiles> =
        spec.elicited.iter().filter(|q| (YEAR_ORIGIN..=last).contains(&q.year)).collect();
    if !elicited.is_empty() {
        write_json(&out.join("elicited.json"), &elicited)?;
        inputs.elicited = Some(PathBuf::from("elicited.json"));
    }

    let rates = model::derive_rates(&params, config.model.jitter)?;
    let paths = model::realize_paths(&params, config.model.jitter)?;
    write_json(
        &out.join("truth.json"),
        &SimulationTruth {
            seed: config.seed,
            params,
            years: (1..=spec.horizon).map(|t| data.year_of(t)).collect(),
            lambda: paths[0].clone(),
            novel_rate: rates.novel_rate,
        },
    )?;
    let fit_config = RunConfig {
        inputs,
        model: ModelConfig {
            horizon: spec.horizon,
            ..config.model.clone()
        },
        hmc: config.hmc.clone(),
        classifier: config.classifier.clone(),
        early_gender: config.early_gender.clone(),
        elicitation: config.elicitation.clone(),
        report: config.report.clone(),
        output_dir: PathBuf::from("fit"),
        seed: config.seed,
    };
    write_json(&out.join("fit_config.json"), &fit_config)?;
    Ok(Outcome::Ok)
}

/// Both fits for one elicited record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationMatch {
    pub year: i32,
    pub quartiles: [f64; 3],
    pub discount_rate: f64,
    pub normal: ElicitedPrior,
    pub gamma_log: ElicitedPrior,
}

pub fn elicit_match(records: &[ElicitedQuartiles], objective: FitObjective) -> Result<Vec<ElicitationMatch>> {
    records
        .iter()
        .map(|q| {
            Ok(ElicitationMatch {
                year: q.year,
                quartiles: q.triple(),
                discount_rate: q.discount_rate,
                normal: elicit_normal(q, objective)?,
                gamma_log: elicit_gamma_log(q, objective)?,
            })
        })
        .collect()
}

fn cmd_elicit_match(config: &RunConfig, input: &Path, output: Option<&Path>) -> Result<Outcome> {
    let records = ingest::load_elicited(input)?;
    let matches = elicit_match(&records, config.elicitation.objective)?;
    let default = config.output_dir.join("elicited_fits.json");
    write_json(output.unwrap_or(&default), &matches)?;
    Ok(Outcome::Ok)
}

/// Vocabulary and fit summary written next to the predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub titles: usize,
    pub skipped_unknown: usize,
    pub vocabulary_size: usize,
    pub removed_marker_words: usize,
    pub dropped_singletons: usize,
    pub accuracy: f64,
    pub config: ClassifierConfig,
}

fn cmd_classify(config: &RunConfig, titles: Option<&Path>) -> Result<Outcome> {
    let path = titles
        .or(config.inputs.titles.as_deref())
        .ok_or_else(|| Error::Config("no titles file given".into()))?;
    let cc = &config.classifier;
    cc.validate()?;
    let raw = ingest::load_titles(path)?;
    let corpus = TitleRecord::from_raw(&raw)?;
    let vocab = classify::build_vocabulary(&corpus, cc.chi2_threshold)?;
    let predictions = classify::loo_evaluate(&corpus, cc)?;
    let metrics = classify::bin_metrics(&predictions, cc.bin_width, cc.bin_origin)?;
    let out = &config.output_dir;
    classify::write_predictions(&out.join("predictions.csv"), &predictions)?;
    classify::write_metrics(&out.join("metrics.csv"), &metrics)?;
    classify::write_removed_words(&out.join("removed_words.csv"), &vocab)?;
    let correct = predictions.iter().filter(|p| p.correct()).count();
    write_json(
        &out.join("classifier.json"),
        &ClassifierSummary {
            titles: corpus.len(),
            skipped_unknown: raw.len() - corpus.len(),
            vocabulary_size: vocab.kept_words.len(),
            removed_marker_words: vocab.removed_marker_words.len(),
            dropped_singletons: vocab.dropped_singletons.len(),
            accuracy: correct as f64 / predictions.len().max(1) as f64,
            config: cc.clone(),
        },
    )?;
    Ok(Outcome::Ok)
}

fn cmd_early_gender(config: &RunConfig, samples: Option<&Path>, totals: Option<&Path>) -> Result<Outcome> {
    let samples_path = samples
        .or(config.inputs.early_samples.as_deref())
        .ok_or_else(|| Error::Config("no annotated sample file given".into()))?;
    let totals_path = totals
        .or(config.inputs.rfgs_total.as_deref())
        .ok_or_else(|| Error::Config("no totals file given".into()))?;
    let rows = ingest::load_early_samples(samples_path)?;
    let totals: Vec<(i32, u64)> = ingest::load_count_series(totals_path, SourceId::RfgsTotal)?
        .entries()
        .iter()
        .copied()
        .filter(|&(y, _)| (EARLIEST_YEAR..YEAR_ORIGIN).contains(&y))
        .collect();
    let joined = EarlyYearSample::join(&rows, &totals)?;
    if joined.is_empty() {
        return Err(Error::Config("no year has both an annotated sample and a total".into()));
    }
    let prior = early_prior(config, None)?;
    let n = config.early_gender.draws;
    if n == 0 {
        return Err(Error::Config("early_gender.draws must be positive".into()));
    }
    let mut intervals = joined
        .iter()
        .map(|s| early_gender::year_count_intervals(s, &prior, &PROBS, n, config.seed))
        .collect::<Result<Vec<_>>>()?;
    let (first, last) = (joined[0].year, joined[joined.len() - 1].year);
    intervals.push(early_gender::aggregate_count_intervals(
        &format!("{first}-{last}"),
        &joined,
        &prior,
        &PROBS,
        n,
        config.seed,
    )?);
    let decade: Vec<EarlyYearSample> = joined.iter().copied().filter(|s| s.year >= 1790).collect();
    if decade.len() == 10 && decade.len() != joined.len() {
        intervals.push(early_gender::aggregate_count_intervals("1790-1799", &decade, &prior, &PROBS, n, config.seed)?);
    }
    write_early_intervals(&config.output_dir.join("early_gender.csv"), &intervals)?;
    Ok(Outcome::Ok)
}

fn write_early_intervals(path: &Path, rows: &[early_gender::CountIntervals]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["label".to_string(), "total".into()];
    for g in ["men", "women", "unknown"] {
        header.extend(PROBS.iter().map(|p| format!("{g}_q{}", (p * 100.0).round())));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.clone(), r.total.to_string()];
        for q in &r.quantiles {
            rec.extend(q.iter().map(|v| format!("{v:.6}")));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
