//! Hamiltonian Monte Carlo with dual-averaging step size and windowed
//! diagonal metric adaptation, run as independent parallel chains.

mod diagnostics;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{eval_with_gradient, DifferentiableScalarField};

pub use diagnostics::{diagnose, ess_bulk, split_rhat, Diagnostics};

/// Energy error beyond which a transition is divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub sample_iters: usize,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub seed: u64,
    /// Mean trajectory length; the step count is drawn uniformly from
    /// [0.8, 1.2] times `integration_time / step_size`.
    pub integration_time: f64,
    /// Half-width of the uniform initialization box.
    pub init_radius: f64,
    pub max_init_tries: usize,
    /// Replaces the adapted step size after warmup.
    pub step_size_override: Option<f64>,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup_iters: 1000,
            sample_iters: 1000,
            target_accept: 0.8,
            max_leapfrog_steps: 1024,
            seed: 0,
            integration_time: 1.0,
            init_radius: 2.0,
            max_init_tries: 100,
            step_size_override: None,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.chains == 0 || self.sample_iters == 0 || self.max_leapfrog_steps == 0 {
            return bad("chains, sample_iters and max_leapfrog_steps must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must be in (0, 1)");
        }
        if !(self.integration_time > 0.0 && self.init_radius >= 0.0) {
            return bad("integration_time must be positive and init_radius non-negative");
        }
        if self.max_init_tries == 0 {
            return bad("max_init_tries must be positive");
        }
        if let Some(s) = self.step_size_override {
            if !(s > 0.0 && s.is_finite()) {
                return bad("step_size_override must be positive");
            }
        }
        Ok(())
    }
}

/// Retained draws of every chain, stored chain-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub chains: usize,
    pub iterations: usize,
    pub dimension: usize,
    pub draws: Vec<f64>,
    pub divergent: Vec<bool>,
    pub accept_stat: Vec<f64>,
    pub leapfrog_steps: Vec<usize>,
    /// Post-warmup step size per chain.
    pub step_sizes: Vec<f64>,
    /// Adapted inverse mass diagonal per chain.
    pub inv_metric: Vec<Vec<f64>>,
    /// Divergent warmup transitions per chain.
    pub warmup_divergent: Vec<usize>,
}

impl PosteriorDraws {
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let o = (chain * self.iterations + iter) * self.dimension;
        &self.draws[o..o + self.dimension]
    }

    /// Per-chain series of coordinate `param`.
    pub fn series(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iterations).map(|i| self.draw(c, i)[param]).collect())
            .collect()
    }

    pub fn divergent_count(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.iterations
    }

    /// Apply `f` to every draw, e.g. to move to natural-scale parameters.
    pub fn map<F>(&self, f: F) -> Result<PosteriorDraws>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let rows: Vec<Vec<f64>> = self
            .draws
            .par_chunks(self.dimension)
            .map(&f)
            .collect::<Result<_>>()?;
        let dimension = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dimension) {
            return Err(Error::Domain("mapped draws have ragged lengths".into()));
        }
        Ok(PosteriorDraws {
            dimension,
            draws: rows.concat(),
            ..self.clone()
        })
    }

    /// Write `chain,iteration,<names>` with one row per retained draw.
    pub fn write_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        let path = path.as_ref();
        if names.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: names.len(),
            });
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.chains {
            for i in 0..self.iterations {
                let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
                row.extend(self.draw(c, i).iter().map(|v| format!("{v:e}")));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a CSV written by [`PosteriorDraws::write_csv`]. Sampler metadata
    /// (step sizes, metric, divergences) is not stored there and comes back empty.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<(PosteriorDraws, Vec<String>)> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "chain" || &header[1] != "iteration" {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                reason: "expected header chain,iteration,<parameters>".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let bad = |reason: String| Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason,
            };
            if rec.len() != header.len() {
                return Err(bad(format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            let chain: usize = rec[0].parse().map_err(|_| bad("bad chain".into()))?;
            let iter: usize = rec[1].parse().map_err(|_| bad("bad iteration".into()))?;
            let vals = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((chain, iter, vals));
        }
        if rows.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        let chains = rows.iter().map(|r| r.0).max().unwrap_or(0);
        let iterations = rows.iter().map(|r| r.1).max().unwrap_or(0);
        if rows.len() != chains * iterations {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: rows.len() + 1,
                reason: format!("{} rows do not fill {chains} chains x {iterations} iterations", rows.len()),
            });
        }
        rows.sort_by_key(|r| (r.0, r.1));
        let duplicate = rows.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1));
        if duplicate || rows[0].0 == 0 || rows[0].1 == 0 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 0,
                reason: "chain and iteration must be 1-based and unique".into(),
            });
        }
        let total = rows.len();
        Ok((
            PosteriorDraws {
                chains,
                iterations,
                dimension: names.len(),
                draws: rows.into_iter().flat_map(|r| r.2).collect(),
                divergent: vec![false; total],
                accept_stat: vec![f64::NAN; total],
                leapfrog_steps: vec![0; total],
                step_sizes: Vec::new(),
                inv_metric: Vec::new(),
                warmup_divergent: Vec::new(),
            },
            names,
        ))
    }
}

/// Write diagnostics as pretty JSON.
pub fn write_diagnostics(path: impl AsRef<Path>, diagnostics: &Diagnostics) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(diagnostics).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{json}").map_err(|e| Error::io(path, e))
}

/// One leapfrog step under a unit metric.
pub fn leapfrog<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    position: &[f64],
    momentum: &[f64],
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, grad) = eval_with_gradient(field, position)?;
    let mut state = State {
        q: position.to_vec(),
        p: momentum.to_vec(),
        logp: 0.0,
        grad,
    };
    let unit = vec![1.0; position.len()];
    leapfrog_step(field, &mut state, step, &unit)?;
    Ok((state.q, state.p))
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn leapfrog_step<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    s: &mut State,
    step: f64,
    inv_metric: &[f64],
) -> Result<()> {
    for (p, g) in s.p.iter_mut().zip(&s.grad) {
        *p += 0.5 * step * g;
    }
    for ((q, p), m) in s.q.iter_mut().zip(&s.p).zip(inv_metric) {
        *q += step * m * p;
    }
    let (logp, grad) = eval_with_gradient(field, &s.q)?;
    s.logp = logp;
    s.grad = grad;
    for (p, g) in s.p.iter_mut().zip(&s.grad) {
        *p += 0.5 * step * g;
    }
    Ok(())
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| m * p * p).sum::<f64>()
}

struct Transition {
    accept_stat: f64,
    divergent: bool,
    steps: usize,
}

/// One HMC transition with `n_steps` leapfrog steps.
fn transition<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    current: &mut State,
    step: f64,
    n_steps: usize,
    inv_metric: &[f64],
    rng: &mut ChaCha8Rng,
) -> Transition {
    let mut s = current.clone();
    for (p, m) in s.p.iter_mut().zip(inv_metric) {
        let z: f64 = rng.sample(StandardNormal);
        *p = z / m.sqrt();
    }
    let h0 = -s.logp + kinetic(&s.p, inv_metric);
    let mut divergent = false;
    for _ in 0..n_steps {
        if leapfrog_step(field, &mut s, step, inv_metric).is_err() {
            divergent = true;
            break;
        }
        let h = -s.logp + kinetic(&s.p, inv_metric);
        if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
            divergent = true;
            break;
        }
    }
    let u: f64 = rng.random();
    if divergent {
        return Transition {
            accept_stat: 0.0,
            divergent,
            steps: n_steps,
        };
    }
    let h1 = -s.logp + kinetic(&s.p, inv_metric);
    let accept_stat = (h0 - h1).exp().min(1.0);
    if u < accept_stat {
        *current = s;
    }
    Transition {
        accept_stat,
        divergent,
        steps: n_steps,
    }
}

/// Nesterov dual averaging of the log step size.
struct DualAveraging {
    mu: f64,
    target: f64,
    counter: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            target,
            counter: 0.0,
            h_bar: 0.0,
            log_step: step.ln(),
            log_step_bar: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - self.counter.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.counter.powf(-Self::KAPPA);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
        self.log_step.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Slow adaptation windows `[start, end)` within a warmup of length `warmup`.
pub fn adaptation_windows(warmup: usize) -> Vec<(usize, usize)> {
    if warmup < 20 {
        return Vec::new();
    }
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if init + term + base > warmup {
        init = warmup * 15 / 100;
        term = warmup / 10;
        base = warmup - init - term;
    }
    let last = warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

/// Running mean and variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Variance shrunk toward 1e-3, as in Stan.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

fn initial_state<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    config: &HmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<State> {
    let d = field.dimension();
    let r = config.init_radius;
    for _ in 0..config.max_init_tries {
        let q: Vec<f64> = (0..d)
            .map(|_| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
            .collect();
        if let Ok((logp, grad)) = eval_with_gradient(field, &q) {
            return Ok(State {
                q,
                p: vec![0.0; d],
                logp,
                grad,
            });
        }
    }
    Err(Error::NonFiniteValue(format!(
        "no finite initial point in {} tries",
        config.max_init_tries
    )))
}

/// Double or halve the step until one leapfrog step crosses acceptance 0.5.
fn reasonable_step<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    state: &State,
    start: f64,
    inv_metric: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut step = start;
    let mut direction = 0.0;
    for _ in 0..100 {
        let mut s = state.clone();
        for (p, m) in s.p.iter_mut().zip(inv_metric) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
        let h0 = -s.logp + kinetic(&s.p, inv_metric);
        let delta = match leapfrog_step(field, &mut s, step, inv_metric) {
            Ok(()) => h0 - (-s.logp + kinetic(&s.p, inv_metric)),
            Err(_) => f64::NEG_INFINITY,
        };
        let up = delta.is_finite() && delta > 0.5f64.ln();
        let dir = if up { 1.0 } else { -1.0 };
        if direction == 0.0 {
            direction = dir;
        } else if dir != direction {
            break;
        }
        step = if up { step * 2.0 } else { step / 2.0 };
        if !(1e-12..=1e7).contains(&step) {
            break;
        }
    }
    step
}

fn step_count(config: &HmcConfig, step: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = config.integration_time / step;
    let jitter: f64 = rng.random_range(0.8..=1.2);
    ((base * jitter).round() as usize).clamp(1, config.max_leapfrog_steps)
}

struct ChainOutput {
    draws: Vec<f64>,
    divergent: Vec<bool>,
    accept_stat: Vec<f64>,
    leapfrog_steps: Vec<usize>,
    step: f64,
    inv_metric: Vec<f64>,
    warmup_divergent: usize,
}

fn run_chain<F: DifferentiableScalarField + ?Sized>(field: &F, config: &HmcConfig, chain: usize) -> Result<ChainOutput> {
    let d = field.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let mut state = initial_state(field, config, &mut rng)?;
    let mut inv_metric = vec![1.0; d];
    let mut step = reasonable_step(field, &state, 1.0, &inv_metric, &mut rng);
    let mut da = DualAveraging::new(step, config.target_accept);
    let windows = adaptation_windows(config.warmup_iters);
    let mut window = 0;
    let mut stats = Welford::new(d);
    let mut warmup_divergent = 0;

    for it in 0..config.warmup_iters {
        let n = step_count(config, step, &mut rng);
        let tr = transition(field, &mut state, step, n, &inv_metric, &mut rng);
        warmup_divergent += tr.divergent as usize;
        step = da.update(tr.accept_stat);
        if let Some(&(start, end)) = windows.get(window) {
            if it >= start && it < end {
                stats.add(&state.q);
            }
            if it + 1 == end {
                inv_metric = stats.regularized_variance();
                stats = Welford::new(d);
                window += 1;
                step = reasonable_step(field, &state, step, &inv_metric, &mut rng);
                da = DualAveraging::new(step, config.target_accept);
            }
        }
    }
    if config.warmup_iters > 0 {
        step = da.final_step();
    }
    if let Some(forced) = config.step_size_override {
        step = forced;
    }

    let n_iter = config.sample_iters;
    let mut out = ChainOutput {
        draws: Vec::with_capacity(n_iter * d),
        divergent: Vec::with_capacity(n_iter),
        accept_stat: Vec::with_capacity(n_iter),
        leapfrog_steps: Vec::with_capacity(n_iter),
        step,
        inv_metric: Vec::new(),
        warmup_divergent,
    };
    for _ in 0..n_iter {
        let n = step_count(config, step, &mut rng);
        let tr = transition(field, &mut state, step, n, &inv_metric, &mut rng);
        out.draws.extend_from_slice(&state.q);
        out.divergent.push(tr.divergent);
        out.accept_stat.push(tr.accept_stat);
        out.leapfrog_steps.push(tr.steps);
    }
    out.inv_metric = inv_metric;
    Ok(out)
}

/// Run all chains in parallel and diagnose the retained draws.
///
/// Output is a deterministic function of the field, the configuration and
/// the seed, whatever the thread count.
pub fn sample<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    config: &HmcConfig,
) -> Result<(PosteriorDraws, Option<Diagnostics>)> {
    config.validate()?;
    let d = field.dimension();
    if d == 0 {
        return Err(Error::Domain("field dimension must be at least 1".into()));
    }
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(field, config, c))
        .collect::<Result<_>>()?;
    let transitions = config.chains * (config.warmup_iters + config.sample_iters);
    let divergent_total: usize =
        outputs.iter().map(|o| o.warmup_divergent + o.divergent.iter().filter(|d| **d).count()).sum();
    if divergent_total == transitions {
        return Err(Error::AllDivergent(transitions));
    }
    let mut draws = PosteriorDraws {
        chains: config.chains,
        iterations: config.sample_iters,
        dimension: d,
        draws: Vec::with_capacity(config.chains * config.sample_iters * d),
        divergent: Vec::new(),
        accept_stat: Vec::new(),
        leapfrog_steps: Vec::new(),
        step_sizes: Vec::new(),
        inv_metric: Vec::new(),
        warmup_divergent: Vec::new(),
    };
    for o in outputs {
        draws.draws.extend(o.draws);
        draws.divergent.extend(o.divergent);
        draws.accept_stat.extend(o.accept_stat);
        draws.leapfrog_steps.extend(o.leapfrog_steps);
        draws.step_sizes.push(o.step);
        draws.inv_metric.push(o.inv_metric);
        draws.warmup_divergent.push(o.warmup_divergent);
    }
    let diagnostics = match diagnose(&draws) {
        Ok(d) => Some(d),
        Err(Error::TooFewDraws { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok((draws, diagnostics))
}
