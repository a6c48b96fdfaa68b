//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn novelrates(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_novelrates"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Ten simulated years of RFGS totals, RFGS gender and LOCED.
fn simulated(dir: &Path) {
    write_json(
        &dir.join("sim.json"),
        &json!({
            "horizon": 10,
            "lambda": {"intercept": 4.0, "slope": 0.02, "sigma": 0.3, "lengthscale": 4.0},
            "sources": {"pc": false, "athenaeum": false, "athenaeum_gender": false}
        }),
    );
    let o = novelrates(dir, &["simulate", "--params", "sim.json", "--out", "sim", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn set_hmc(config: &Path, hmc: Value) {
    let mut c = read_json(config);
    for (k, v) in hmc.as_object().unwrap() {
        c["hmc"][k] = v.clone();
    }
    write_json(config, &c);
}

#[test]
fn help_documents_every_flag() {
    let dir = TempDir::new().unwrap();
    let o = novelrates(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--seed", "--out", "--threads"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    for cmd in ["fit", "summarize", "simulate", "elicit-match", "classify", "early-gender"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flag_and_unknown_config_key_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&novelrates(dir.path(), &["fit", "--bogus"])), 1);
    write_json(&dir.path().join("c.json"), &json!({"no_such_key": 1}));
    let o = novelrates(dir.path(), &["fit", "--config", "c.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn fit_is_deterministic_and_summarize_round_trips() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulated(d);
    let config = d.join("sim/fit_config.json");
    set_hmc(&config, json!({"chains": 4, "warmup_iters": 400, "sample_iters": 400, "integration_time": 2.0}));
    let inputs_before = fs::read(d.join("sim/rfgs_total.csv")).unwrap();

    let run = |out: &str, threads: &str| {
        let o = novelrates(
            d,
            &["fit", "--config", "sim/fit_config.json", "--seed", "1", "--out", out, "--threads", threads],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (
            fs::read(d.join(out).join("draws.csv")).unwrap(),
            fs::read(d.join(out).join("diagnostics.json")).unwrap(),
        )
    };
    let (draws_a, diag_a) = run("a", "1");
    let (draws_b, diag_b) = run("b", "3");
    assert!(draws_a == draws_b, "draws differ between identical runs");
    assert!(diag_a == diag_b, "diagnostics differ between identical runs");
    assert_eq!(fs::read(d.join("sim/rfgs_total.csv")).unwrap(), inputs_before);

    let diag = read_json(&d.join("a/diagnostics.json"));
    assert_eq!(diag["status"], "ok");
    assert!(diag["max_rhat"].as_f64().unwrap() <= 1.05);
    let header = String::from_utf8_lossy(&draws_a).lines().next().unwrap().to_string();
    assert!(header.starts_with("chain,iteration,alpha_lambda,beta_lambda,sigma_lambda"));
    assert_eq!(String::from_utf8_lossy(&draws_a).lines().count(), 1 + 4 * 400);

    let o = novelrates(d, &["summarize", "--config", "sim/fit_config.json", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["summary.csv", "decades.csv", "growth.csv", "totals.csv", "rate.svg", "rate_log10.svg", "men_share.svg"] {
        assert!(d.join("a").join(f).exists(), "{f} not written");
    }
    // Every simulated year has a known RFGS total, so the summary echoes it.
    let totals: Vec<String> = fs::read_to_string(d.join("sim/rfgs_total.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    let summary = fs::read_to_string(d.join("a/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for (row, total) in rows.iter().zip(&totals) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], "true");
        assert_eq!(f[3].parse::<f64>().unwrap(), total.parse::<f64>().unwrap());
        assert_eq!(f[4], f[8], "known total must have zero width");
    }
    let decades = fs::read_to_string(d.join("a/decades.csv")).unwrap();
    let sum: u64 = totals.iter().map(|t| t.parse::<u64>().unwrap()).sum();
    let row: Vec<&str> = decades.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "1800");
    assert_eq!(row[3].parse::<f64>().unwrap(), sum as f64);

    let again = novelrates(d, &["summarize", "--config", "sim/fit_config.json", "--out", "a", "--draws", "b/draws.csv"]);
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read_to_string(d.join("a/summary.csv")).unwrap(), summary);
}

#[test]
fn broken_csv_exits_one_with_line_number() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("totals.csv"), "year,count\n1800,12\n1801,abc\n").unwrap();
    write_json(
        &d.join("c.json"),
        &json!({"inputs": {"rfgs_total": "totals.csv"}, "model": {"horizon": 5}}),
    );
    let o = novelrates(d, &["fit", "--config", "c.json"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("malformed row at line 3"), "{err}");
    assert!(!d.join("out/draws.csv").exists());
}

#[test]
fn huge_forced_step_exits_two_with_divergence_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulated(d);
    let config = d.join("sim/fit_config.json");
    set_hmc(
        &config,
        json!({"chains": 2, "warmup_iters": 50, "sample_iters": 50, "step_size_override": 50.0}),
    );
    let o = novelrates(d, &["fit", "--config", "sim/fit_config.json", "--out", "bad"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
    let diag = read_json(&d.join("bad/diagnostics.json"));
    assert_eq!(diag["status"], "suspect");
    assert!(diag["divergent_fraction"].as_f64().unwrap() > 0.01);
}

#[test]
fn elicit_match_writes_both_fits() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("q.json"), r#"[{"year": 1886, "q25": 394, "q50": 482, "q75": 613}]"#).unwrap();
    let o = novelrates(d, &["elicit-match", "--input", "q.json", "--output", "fits.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = read_json(&d.join("fits.json"));
    let normal = &v[0]["normal"];
    assert_eq!(normal["family"], "Normal");
    // Least squares against symmetric normal quartiles: the mean of the three
    // targets and half the interquartile range over the 75% normal quantile.
    let mean = normal["params"][0].as_f64().unwrap();
    let sd = normal["params"][1].as_f64().unwrap();
    assert!((mean - (394.0 + 482.0 + 613.0) / 3.0).abs() < 1e-6, "{mean}");
    assert!((sd - (613.0 - 394.0) / (2.0 * 0.674_489_750_196_081_7)).abs() < 1e-6, "{sd}");
    assert_eq!(v[0]["gamma_log"]["family"], "GammaShapeRate");
}

#[test]
fn classify_toy_corpus_predicts_every_title() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let rows = [
        (1800, "M", "The Castle of Otranto"),
        (1801, "F", "A Tale of the Heart"),
        (1802, "M", "The Castle Spectre"),
        (1803, "F", "Tales of the Heart and Home"),
        (1804, "M", "The Monk of the Castle"),
        (1805, "F", "The Heart of Midlothian"),
        (1806, "M", "Castle Rackrent"),
        (1807, "F", "Simple Tales"),
        (1808, "M", "The Old Castle"),
        (1809, "F", "Heart and Tales"),
        (1810, "U", "An Anonymous Novel"),
    ];
    let mut csv = String::from("year,gender,title\n");
    for (y, g, t) in rows {
        csv.push_str(&format!("{y},{g},\"{t}\"\n"));
    }
    fs::write(d.join("titles.csv"), csv).unwrap();
    let o = novelrates(d, &["classify", "--titles", "titles.csv", "--out", "cls"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let preds = fs::read_to_string(d.join("cls/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "year,true,predicted,prob");
    assert_eq!(preds.lines().count(), 1 + 10);
    assert!(d.join("cls/metrics.csv").exists());
    assert!(d.join("cls/removed_words.csv").exists());
    let summary = read_json(&d.join("cls/classifier.json"));
    assert_eq!(summary["titles"], 10);
    assert_eq!(summary["skipped_unknown"], 1);
}

#[test]
fn early_gender_intervals_respect_the_totals() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut samples = String::from("year,men,women,unknown\n");
    let mut totals = String::from("year,count\n");
    for y in 1789..=1799 {
        samples.push_str(&format!("{y},3,4,3\n"));
        totals.push_str(&format!("{y},{}\n", 60 + (y - 1789) * 2));
    }
    totals.push_str("1800,80\n");
    fs::write(d.join("samples.csv"), samples).unwrap();
    fs::write(d.join("totals.csv"), totals).unwrap();
    fs::write(d.join("gender.csv"), "year,men,women,unknown\n1800,30,35,15\n").unwrap();
    write_json(&d.join("c.json"), &json!({"inputs": {"rfgs_gender": "gender.csv"}}));
    let args = [
        "early-gender", "--config", "c.json", "--samples", "samples.csv", "--totals", "totals.csv", "--seed", "9",
    ];
    let mut o = novelrates(d, &[&args[..], &["--out", "e1"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    o = novelrates(d, &[&args[..], &["--out", "e2"]].concat());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(d.join("e1/early_gender.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(d.join("e2/early_gender.csv")).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    // Eleven years, the whole-span aggregate and the 1790s decade.
    assert_eq!(lines.len(), 1 + 11 + 2);
    assert!(lines[12].starts_with("1789-1799,"));
    assert!(lines[13].starts_with("1790-1799,"));
    for line in &lines[1..12] {
        let f: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let total = f[0];
        assert!(f[1..].iter().all(|&v| (0.0..=total).contains(&v)));
    }
}

#[test]
fn early_gender_without_a_prior_centre_exits_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("samples.csv"), "year,men,women,unknown\n1795,3,4,3\n").unwrap();
    fs::write(d.join("totals.csv"), "year,count\n1795,60\n").unwrap();
    let o = novelrates(d, &["early-gender", "--samples", "samples.csv", "--totals", "totals.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("p1800"), "{}", stderr(&o));
}
