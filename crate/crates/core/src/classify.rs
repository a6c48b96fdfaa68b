//! Author-gender prediction from title words: L2 logistic regression over
//! within-title word counts, after dropping single-title words and removing
//! words whose presence is strongly associated with gender (chi-squared
//! filter). Evaluated by exact leave-one-out with the vocabulary rebuilt in
//! every fold.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_logit, softplus};
use crate::error::{Error, Result};
use crate::ingest::{GenderLabel, RawTitle};

pub mod synthetic;

/// Token multiset of one title.
pub type Tokens = BTreeMap<String, u32>;

/// Lowercase, delete punctuation, split on whitespace, count.
pub fn tokenize(title: &str) -> Tokens {
    let cleaned: String = title
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let mut out = Tokens::new();
    for w in cleaned.split_whitespace() {
        *out.entry(w.to_string()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Man,
    Woman,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Man => "M",
            Label::Woman => "F",
        }
    }

    fn target(self) -> f64 {
        (self == Label::Man) as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleRecord {
    pub year: i32,
    pub label: Label,
    pub tokens: Tokens,
}

impl TitleRecord {
    pub fn new(year: i32, label: Label, title: &str) -> Result<Self> {
        let tokens = tokenize(title);
        if tokens.is_empty() {
            return Err(Error::Domain(format!("title {title:?} ({year}) has no words")));
        }
        Ok(Self { year, label, tokens })
    }

    /// Records for every title with a known author gender.
    pub fn from_raw(titles: &[RawTitle]) -> Result<Vec<Self>> {
        titles
            .iter()
            .filter_map(|t| {
                let label = match t.gender {
                    GenderLabel::Man => Label::Man,
                    GenderLabel::Woman => Label::Woman,
                    GenderLabel::Unknown => return None,
                };
                Some(Self::new(t.year, label, &t.title))
            })
            .collect()
    }
}

/// Pearson chi-squared of a 2x2 table without continuity correction:
/// rows are word present/absent, columns are Man/Woman titles.
pub fn chi2_2x2(present_man: u64, present_woman: u64, n_man: u64, n_woman: u64) -> f64 {
    let (a, b) = (present_man as f64, present_woman as f64);
    let (c, d) = ((n_man - present_man) as f64, (n_woman - present_woman) as f64);
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom == 0.0 {
        return 0.0;
    }
    n * (a * d - b * c).powi(2) / denom
}

/// Chi-squared statistic of one word's presence against the labels.
pub fn chi2_statistic(word: &str, corpus: &[TitleRecord]) -> f64 {
    let stats = WordStats::of(corpus);
    let (m, w) = stats.presence.get(word).copied().unwrap_or((0, 0));
    chi2_2x2(m, w, stats.n_man, stats.n_woman)
}

/// Per-word title counts by label.
#[derive(Debug, Clone, Default)]
struct WordStats {
    presence: BTreeMap<String, (u64, u64)>,
    n_man: u64,
    n_woman: u64,
}

impl WordStats {
    fn of(corpus: &[TitleRecord]) -> Self {
        let mut s = Self::default();
        for r in corpus {
            s.add(r, 1);
        }
        s
    }

    fn add(&mut self, r: &TitleRecord, sign: i64) {
        let bump = |v: &mut u64| *v = (*v as i64 + sign) as u64;
        match r.label {
            Label::Man => bump(&mut self.n_man),
            Label::Woman => bump(&mut self.n_woman),
        }
        for w in r.tokens.keys() {
            let e = self.presence.entry(w.clone()).or_insert((0, 0));
            match r.label {
                Label::Man => bump(&mut e.0),
                Label::Woman => bump(&mut e.1),
            }
        }
    }

    fn vocabulary(&self, threshold: f64) -> Vocabulary {
        let mut v = Vocabulary::default();
        for (w, &(m, f)) in &self.presence {
            if m + f < 2 {
                if m + f == 1 {
                    v.dropped_singletons.push(w.clone());
                }
                continue;
            }
            let stat = chi2_2x2(m, f, self.n_man, self.n_woman);
            if stat > threshold {
                v.removed_marker_words.push((w.clone(), stat));
            } else {
                v.kept_words.push(w.clone());
            }
        }
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Sorted.
    pub kept_words: Vec<String>,
    /// Sorted by word, with the statistic that removed it.
    pub removed_marker_words: Vec<(String, f64)>,
    pub dropped_singletons: Vec<String>,
}

impl Vocabulary {
    fn index(&self) -> HashMap<&str, usize> {
        self.kept_words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect()
    }
}

/// Drop words seen in one title, then remove words with statistic above `threshold`.
pub fn build_vocabulary(corpus: &[TitleRecord], threshold: f64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(WordStats::of(corpus).vocabulary(threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Within-title token counts.
    Counts,
    /// 1 if the word occurs in the title.
    Presence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyConvention {
    /// `l2` multiplies the penalty: (l2/2)|w|^2.
    Strength,
    /// `l2` is an inverse strength C: (1/(2C))|w|^2.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub chi2_threshold: f64,
    pub l2: f64,
    pub penalty: PenaltyConvention,
    pub features: FeatureKind,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub bin_width: i32,
    pub bin_origin: i32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            chi2_threshold: 7.0,
            l2: 1.0,
            penalty: PenaltyConvention::Strength,
            features: FeatureKind::Counts,
            tolerance: 1e-6,
            max_iterations: 100,
            bin_width: 5,
            bin_origin: 1800,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.l2.is_finite() && self.l2 > 0.0) {
            return bad("classifier l2 must be positive");
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return bad("classifier tolerance and max_iterations must be positive");
        }
        if self.bin_width < 1 {
            return bad("bin_width must be at least 1");
        }
        if self.chi2_threshold.is_nan() {
            return bad("chi2_threshold must be a number");
        }
        Ok(())
    }

    /// Multiplier of (1/2)|w|^2 in the objective.
    pub fn penalty_strength(&self) -> f64 {
        match self.penalty {
            PenaltyConvention::Strength => self.l2,
            PenaltyConvention::Inverse => 1.0 / self.l2,
        }
    }
}

/// Sparse design row: (column, value).
type Row = Vec<(usize, f64)>;

fn design_row(tokens: &Tokens, index: &HashMap<&str, usize>, kind: FeatureKind) -> Row {
    let mut row: Row = tokens
        .iter()
        .filter_map(|(w, &c)| {
            index.get(w.as_str()).map(|&j| {
                (
                    j,
                    match kind {
                        FeatureKind::Counts => c as f64,
                        FeatureKind::Presence => 1.0,
                    },
                )
            })
        })
        .collect();
    row.sort_unstable_by_key(|e| e.0);
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub words: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_strength: f64,
    pub features: FeatureKind,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticModel {
    /// Probability that the title's author is a man.
    pub fn predict_proba(&self, tokens: &Tokens) -> f64 {
        let index: HashMap<&str, usize> =
            self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let row = design_row(tokens, &index, self.features);
        inv_logit(self.intercept + row.iter().map(|&(j, v)| self.weights[j] * v).sum::<f64>())
    }

    pub fn predict(&self, tokens: &Tokens) -> Label {
        if self.predict_proba(tokens) >= 0.5 {
            Label::Man
        } else {
            Label::Woman
        }
    }

    /// Penalized negative log-likelihood of `corpus` under this model.
    pub fn objective(&self, corpus: &[TitleRecord]) -> f64 {
        let index: HashMap<&str, usize> =
            self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let rows: Vec<Row> = corpus.iter().map(|r| design_row(&r.tokens, &index, self.features)).collect();
        let y: Vec<f64> = corpus.iter().map(|r| r.label.target()).collect();
        let mut theta = vec![self.intercept];
        theta.extend(&self.weights);
        Problem {
            rows: &rows,
            y: &y,
            lambda: self.l2_strength,
        }
        .value(&theta)
    }
}

/// Penalized logistic loss over sparse rows; theta = [intercept, weights..].
struct Problem<'a> {
    rows: &'a [Row],
    y: &'a [f64],
    lambda: f64,
}

impl Problem<'_> {
    fn eta(&self, theta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| theta[0] + r.iter().map(|&(j, v)| theta[j + 1] * v).sum::<f64>())
            .collect()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let nll: f64 = self.eta(theta).iter().zip(self.y).map(|(e, y)| softplus(*e) - y * e).sum();
        nll + 0.5 * self.lambda * theta[1..].iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient and Hessian weights p(1-p).
    fn gradient(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; theta.len()];
        let mut h = Vec::with_capacity(self.rows.len());
        for ((r, e), y) in self.rows.iter().zip(self.eta(theta)).zip(self.y) {
            let p = inv_logit(e);
            let resid = p - y;
            g[0] += resid;
            for &(j, v) in r {
                g[j + 1] += resid * v;
            }
            h.push(p * (1.0 - p));
        }
        for j in 1..theta.len() {
            g[j] += self.lambda * theta[j];
        }
        (g, h)
    }

    fn hess_vec(&self, h: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (r, &d) in self.rows.iter().zip(h) {
            let u = d * (v[0] + r.iter().map(|&(j, x)| v[j + 1] * x).sum::<f64>());
            out[0] += u;
            for &(j, x) in r {
                out[j + 1] += u * x;
            }
        }
        for j in 1..v.len() {
            out[j] += self.lambda * v[j];
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Truncated conjugate gradient for H s = -g.
fn newton_direction(p: &Problem, h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let tol = norm(g) * norm(g).sqrt().min(0.5);
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..(2 * n).max(10) {
        if rr.sqrt() <= tol {
            break;
        }
        let hd = p.hess_vec(h, &d);
        let curv = dot(&d, &hd);
        if curv <= 0.0 {
            break;
        }
        let a = rr / curv;
        for i in 0..n {
            s[i] += a * d[i];
            r[i] -= a * hd[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_new;
    }
    if s.iter().all(|x| *x == 0.0) {
        r = g.iter().map(|x| -x).collect();
        return r;
    }
    s
}

fn newton_cg(p: &Problem, mut theta: Vec<f64>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let mut f = p.value(&theta);
    for it in 0..=max_iter {
        let (g, h) = p.gradient(&theta);
        let gn = norm(&g);
        if gn < tol {
            return Ok((theta, it, gn));
        }
        if it == max_iter {
            return Err(Error::NonConvergence {
                grad_norm: gn,
                iterations: it,
            });
        }
        let s = newton_direction(p, &h, &g);
        let slope = dot(&g, &s);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&s).map(|(t, d)| t + step * d).collect();
            let ft = p.value(&trial);
            if ft <= f + 1e-4 * step * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Objective differences are at roundoff; take the full step if it
            // still shrinks the gradient.
            let trial: Vec<f64> = theta.iter().zip(&s).map(|(t, d)| t + d).collect();
            if norm(&p.gradient(&trial).0) >= gn {
                return Err(Error::NonConvergence {
                    grad_norm: gn,
                    iterations: it,
                });
            }
            f = p.value(&trial);
            theta = trial;
        }
    }
    unreachable!("loop returns by max_iter")
}

fn fit_rows(
    rows: &[Row],
    y: &[f64],
    words: Vec<String>,
    config: &ClassifierConfig,
    start: Option<Vec<f64>>,
) -> Result<LogisticModel> {
    let dim = words.len() + 1;
    let theta = start.unwrap_or_else(|| vec![0.0; dim]);
    debug_assert_eq!(theta.len(), dim);
    let problem = Problem {
        rows,
        y,
        lambda: config.penalty_strength(),
    };
    let (theta, iterations, grad_norm) = newton_cg(&problem, theta, config.tolerance, config.max_iterations)?;
    Ok(LogisticModel {
        words,
        intercept: theta[0],
        weights: theta[1..].to_vec(),
        l2_strength: problem.lambda,
        features: config.features,
        iterations,
        grad_norm,
    })
}

/// Fit on a corpus with a given vocabulary.
pub fn fit(corpus: &[TitleRecord], vocab: &Vocabulary, config: &ClassifierConfig) -> Result<LogisticModel> {
    fit_from(corpus, vocab, config, None)
}

/// Fit starting from another model's coefficients (matched by word; new words start at 0).
pub fn fit_from(
    corpus: &[TitleRecord],
    vocab: &Vocabulary,
    config: &ClassifierConfig,
    warm: Option<&LogisticModel>,
) -> Result<LogisticModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let index = vocab.index();
    let rows: Vec<Row> = corpus.iter().map(|r| design_row(&r.tokens, &index, config.features)).collect();
    let y: Vec<f64> = corpus.iter().map(|r| r.label.target()).collect();
    let start = warm.map(|m| {
        let old: HashMap<&str, f64> = m.words.iter().map(String::as_str).zip(m.weights.iter().copied()).collect();
        let mut t = vec![m.intercept];
        t.extend(vocab.kept_words.iter().map(|w| old.get(w.as_str()).copied().unwrap_or(0.0)));
        t
    });
    fit_rows(&rows, &y, vocab.kept_words.clone(), config, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub year: i32,
    pub truth: Label,
    pub predicted: Label,
    /// Probability of a man author.
    pub prob: f64,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

/// Exact leave-one-out: each title is predicted by a model whose vocabulary
/// and coefficients come from the other titles only. Folds start from the
/// full-corpus fit; the optimum is unique, so this changes only run time.
pub fn loo_evaluate(corpus: &[TitleRecord], config: &ClassifierConfig) -> Result<Vec<Prediction>> {
    loo_with(corpus, config, true)
}

/// Leave-one-out with every fold started from zero.
pub fn loo_evaluate_cold(corpus: &[TitleRecord], config: &ClassifierConfig) -> Result<Vec<Prediction>> {
    loo_with(corpus, config, false)
}

fn loo_with(corpus: &[TitleRecord], config: &ClassifierConfig, warm: bool) -> Result<Vec<Prediction>> {
    config.validate()?;
    if corpus.len() < 2 {
        return Err(Error::Domain("leave-one-out needs at least two titles".into()));
    }
    let stats = WordStats::of(corpus);
    let full = if warm {
        Some(fit_from(corpus, &stats.vocabulary(config.chi2_threshold), config, None)?)
    } else {
        None
    };
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let held = &corpus[i];
            let mut fold_stats = stats.clone();
            fold_stats.add(held, -1);
            let vocab = fold_stats.vocabulary(config.chi2_threshold);
            let train: Vec<TitleRecord> = corpus
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let model = fit_from(&train, &vocab, config, full.as_ref())?;
            let prob = model.predict_proba(&held.tokens);
            Ok(Prediction {
                year: held.year,
                truth: held.label,
                predicted: if prob >= 0.5 { Label::Man } else { Label::Woman },
                prob,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub bin_start: i32,
    pub bin_end: i32,
    pub n: usize,
    pub correct: usize,
    pub men: usize,
    pub men_identified: usize,
    pub accuracy: f64,
    /// Absent when the bin has no men-authored titles.
    pub sensitivity: Option<f64>,
}

/// Accuracy and sensitivity (recall of men-authored titles) per bin of
/// `width` years counted from `origin`. Empty bins are omitted.
pub fn bin_metrics(predictions: &[Prediction], width: i32, origin: i32) -> Result<Vec<BinMetrics>> {
    if predictions.is_empty() {
        return Err(Error::Domain("no predictions to bin".into()));
    }
    if width < 1 {
        return Err(Error::Domain(format!("bin width {width} must be at least 1")));
    }
    let mut bins: BTreeMap<i32, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        let start = origin + (p.year - origin).div_euclid(width) * width;
        bins.entry(start).or_default().push(p);
    }
    Ok(bins
        .into_iter()
        .map(|(start, ps)| {
            let correct = ps.iter().filter(|p| p.correct()).count();
            let men = ps.iter().filter(|p| p.truth == Label::Man).count();
            let men_identified = ps.iter().filter(|p| p.truth == Label::Man && p.correct()).count();
            BinMetrics {
                bin_start: start,
                bin_end: start + width - 1,
                n: ps.len(),
                correct,
                men,
                men_identified,
                accuracy: correct as f64 / ps.len() as f64,
                sensitivity: (men > 0).then(|| men_identified as f64 / men as f64),
            }
        })
        .collect())
}

/// `year,true,predicted,prob`
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["year", "true", "predicted", "prob"])?;
    for p in predictions {
        w.write_record([
            p.year.to_string(),
            p.truth.name().to_string(),
            p.predicted.name().to_string(),
            format!("{:.6}", p.prob),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `bin_start,bin_end,n,accuracy,sensitivity` (sensitivity empty when undefined)
pub fn write_metrics(path: &Path, metrics: &[BinMetrics]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["bin_start", "bin_end", "n", "accuracy", "sensitivity"])?;
    for m in metrics {
        w.write_record([
            m.bin_start.to_string(),
            m.bin_end.to_string(),
            m.n.to_string(),
            format!("{:.6}", m.accuracy),
            m.sensitivity.map_or(String::new(), |s| format!("{s:.6}")),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One removed word per line, sorted.
pub fn write_removed_words(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for (w, _) in &vocab.removed_marker_words {
        writeln!(file, "{w}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
