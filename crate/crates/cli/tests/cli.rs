use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adacnp::detect::dtw_distance;
use adacnp::metrics::{inverse_normal_cdf, parse_key_values};
use chrono::{Duration, NaiveDate};

fn adacnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adacnp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = adacnp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Non-comment lines of a text output.
fn body(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn gen_toy_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-toy", "--seed", "4", "--out", s(&a)]);
    ok(&["gen-toy", "--seed", "4", "--out", s(&b)]);
    for f in ["tasks.tsv", "samples.tsv", "toy.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["gen-toy", "--seed", "5", "--out", s(&c)]);
    assert_ne!(std::fs::read(a.join("samples.tsv")).unwrap(), std::fs::read(c.join("samples.tsv")).unwrap());
}

#[test]
fn zero_points_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = adacnp(&["gen-toy", "--toy-points", "0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toy_points"));
}

#[test]
fn thousand_point_file_passes_an_independent_audit() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-toy", "--toy-tasks", "1", "--toy-points", "1000", "--out", s(dir.path())]);
    let text = std::fs::read_to_string(dir.path().join("samples.tsv")).unwrap();
    let mut comments = 0;
    let mut rows = 0;
    let mut header = None;
    for line in text.split('\n').filter(|l| !l.is_empty()) {
        if line.starts_with('#') {
            comments += 1;
            continue;
        }
        if header.is_none() {
            header = Some(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4, "{line}");
        assert_eq!(cols[0], "0");
        let x: f64 = cols[1].parse().unwrap();
        assert!((-2.0..=3.0).contains(&x));
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(cols[3], if x >= 1.0 { "extreme" } else { "normal" });
        rows += 1;
    }
    assert!(comments > 0);
    assert_eq!(header.as_deref(), Some("task\tx\ty\tlabel"));
    assert_eq!(rows, 1000);
}

#[test]
fn config_file_and_flags_resolve_by_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# shared settings\ntoy_points = 7\ntoy_tasks = 2\nhalf_window = 3\n").unwrap();
    ok(&["gen-toy", "--config", s(&cfg), "--toy-tasks", "3", "--out", s(dir.path())]);
    let samples = std::fs::read_to_string(dir.path().join("samples.tsv")).unwrap();
    assert!(samples.contains("# toy_points = 7\n"));
    assert!(samples.contains("# toy_tasks = 3\n"));
    assert_eq!(body(&dir.path().join("samples.tsv")).len(), 1 + 3 * 7);

    std::fs::write(&cfg, "toy_pointz = 7\n").unwrap();
    let out = adacnp(&["gen-toy", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toy_pointz"));
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(adacnp(&["train", "--help"]).status.code(), Some(0));
    let help = String::from_utf8_lossy(&adacnp(&["train", "--help"]).stdout).to_string();
    assert!(help.contains("--learning-rate"));
    assert_eq!(adacnp(&["train", "--no-such-flag", "1"]).status.code(), Some(2));
    assert_eq!(adacnp(&[]).status.code(), Some(2));
}

fn hourly_csv(days: &[Vec<f64>], start: NaiveDate) -> String {
    let mut s = String::from("timestamp,load,temperature\n");
    for (d, loads) in days.iter().enumerate() {
        for (h, l) in loads.iter().enumerate() {
            let t = (start + Duration::days(d as i64)).and_hms_opt(h as u32, 0, 0).unwrap();
            let _ = writeln!(s, "{},{l},{}", t.format("%Y-%m-%d %H:%M"), 10.0 + h as f64 * 0.2);
        }
    }
    s
}

fn detect_labels(dir: &Path, csv: &str) -> BTreeMap<String, String> {
    let input = dir.join("series.csv");
    std::fs::write(&input, csv).unwrap();
    ok(&["detect", "--input", s(&input), "--out", s(dir)]);
    body(&dir.join("labels.tsv"))
        .iter()
        .skip(1)
        .map(|l| {
            let (d, r) = l.split_once('\t').unwrap();
            (d.to_string(), r.to_string())
        })
        .collect()
}

#[test]
fn constant_series_has_no_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let days = vec![vec![500.0; 24]; 30];
    let labels = detect_labels(dir.path(), &hourly_csv(&days, NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()));
    assert_eq!(labels.len(), 30);
    assert!(labels.values().all(|l| l == "normal"));
}

#[test]
fn three_spike_days_are_the_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    let spikes = [8usize, 20, 32];
    let days: Vec<Vec<f64>> = (0..40)
        .map(|d| {
            (0..24)
                .map(|h| {
                    let base = 1000.0 + 200.0 * (std::f64::consts::TAU * h as f64 / 24.0).sin() + 3.0 * (d as f64).sin();
                    if spikes.contains(&d) && (12..18).contains(&h) { base + 500.0 } else { base }
                })
                .collect()
        })
        .collect();
    let labels = detect_labels(dir.path(), &hourly_csv(&days, start));

    // scripted recomputation with the default window and threshold
    let n = days.len();
    let win = |d: usize| d.saturating_sub(7)..=(d + 7).min(n - 1);
    let score: Vec<f64> = (0..n)
        .map(|d| {
            let others: Vec<usize> = win(d).filter(|&j| j != d).collect();
            others.iter().map(|&j| dtw_distance(&days[d], &days[j]).unwrap()).sum::<f64>() / others.len() as f64
        })
        .collect();
    let mut expected = Vec::new();
    for d in 0..n {
        let w: Vec<f64> = win(d).map(|j| score[j]).collect();
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / w.len() as f64).sqrt();
        if score[d] > m + 3.0 * sd {
            expected.push((start + Duration::days(d as i64)).to_string());
        }
    }
    let got: Vec<String> = labels.iter().filter(|(_, l)| *l == "extreme").map(|(d, _)| d.clone()).collect();
    assert_eq!(got, expected);
    let spike_dates: Vec<String> = spikes.iter().map(|&d| (start + Duration::days(d as i64)).to_string()).collect();
    assert_eq!(got, spike_dates);
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = adacnp(&["detect", "--input", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

const TINY: &[&str] = &[
    "--embedding-dim", "4", "--representation-dim", "8", "--encoder-hidden", "8", "--decoder-hidden", "8",
    "--embedding-hidden", "6", "--scorer-hidden", "6",
];

fn train_toy(out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--iterations", "30", "--out", s(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    train_toy(dir.path(), &["--learning-rate", "0"]);
    let model = std::fs::read(dir.path().join("model.ckpt")).unwrap();
    assert_eq!(model, std::fs::read(dir.path().join("init.ckpt")).unwrap());
    let moved = dir.path().join("moved");
    train_toy(&moved, &[]);
    assert_ne!(std::fs::read(moved.join("model.ckpt")).unwrap(), std::fs::read(moved.join("init.ckpt")).unwrap());
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_toy(&a, &["--seed", "3", "--model", "cnp"]);
    train_toy(&b, &["--seed", "3", "--model", "cnp"]);
    for f in ["model.ckpt", "loss.tsv", "loss.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gp_cannot_be_trained() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(adacnp(&["train", "--model", "gp", "--out", s(dir.path())]).status.code(), Some(2));
}

/// A small fixture with labels, shared by the load-pipeline tests.
struct LoadRun {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl LoadRun {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["gen-load", "--fixture-days", "240", "--fixture-extremes", "10", "--out", s(&root.join("data"))]);
        ok(&[
            "detect",
            "--input", s(&root.join("data/load.csv")),
            "--holidays", s(&root.join("data/holidays.txt")),
            "--out", s(&root.join("detect")),
        ]);
        let cfg = format!(
            "experiment = load\ninput = {}\nholidays = {}\nlabels = {}\ntest_fraction = 0.25\n\
             iterations = 40\nembedding_dim = 4\nrepresentation_dim = 8\nencoder_hidden = 8\n\
             decoder_hidden = 8\nembedding_hidden = 6\nscorer_hidden = 6\nresamples = 3\n",
            s(&root.join("data/load.csv")),
            s(&root.join("data/holidays.txt")),
            s(&root.join("detect/labels.tsv")),
        );
        std::fs::write(root.join("run.cfg"), cfg).unwrap();
        Self { _dir: dir, root }
    }

    fn cfg(&self) -> String {
        s(&self.root.join("run.cfg")).to_string()
    }

    fn path(&self, p: &str) -> String {
        s(&self.root.join(p)).to_string()
    }
}

#[test]
fn load_pipeline_reports_match_prediction_files() {
    let run = LoadRun::new();
    ok(&["train", "--config", &run.cfg(), "--out", &run.path("train")]);
    ok(&["eval", "--config", &run.cfg(), "--checkpoint", &run.path("train/model.ckpt"), "--out", &run.path("eval")]);

    let report_text = std::fs::read_to_string(run.root.join("eval/report.txt")).unwrap();
    let report = parse_key_values(&report_text).unwrap();
    let days: usize = report["days"].parse().unwrap();
    let num = |k: &str| report[k].parse::<f64>().unwrap();

    let levels: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
    let mut per = Vec::new();
    for r in 0..3 {
        let rows = body(&run.root.join(format!("eval/predictions/resample_{r:02}.tsv")));
        assert_eq!(rows[0], "date\thour\ty\tmean\tvar\tload_mw\tmean_mw\tstd_mw");
        assert_eq!(rows.len() - 1, 24 * days);
        let (mut se, mut nll, mut pin) = (0.0, 0.0, 0.0);
        for row in &rows[1..] {
            let c: Vec<f64> = row.split('\t').skip(2).map(|v| v.parse().unwrap()).collect();
            let (y, m, v) = (c[0], c[1], c[2]);
            se += (y - m) * (y - m);
            nll += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + (y - m) * (y - m) / (2.0 * v);
            for &q in &levels {
                let f = m + v.sqrt() * inverse_normal_cdf(q).unwrap();
                pin += if y >= f { q * (y - f) } else { (1.0 - q) * (f - y) };
            }
        }
        let n = (rows.len() - 1) as f64;
        per.push([100.0 * se / n, nll / n, pin / (n * levels.len() as f64)]);
    }
    for (k, name) in ["mse_percent", "nll", "pinball"].iter().enumerate() {
        let m = per.iter().map(|p| p[k]).sum::<f64>() / 3.0;
        let sd = (per.iter().map(|p| (p[k] - m) * (p[k] - m)).sum::<f64>() / 2.0).sqrt();
        assert!((num(&format!("{name}.mean")) - m).abs() < 1e-9 * m.abs().max(1.0), "{name}");
        assert!((num(&format!("{name}.spread")) - sd).abs() < 1e-9, "{name} spread");
    }

    // historical days are the context pool, so evaluating on them must fail
    let leak = adacnp(&[
        "eval", "--config", &run.cfg(), "--checkpoint", &run.path("train/model.ckpt"), "--eval-set", "historical",
        "--out", &run.path("leak"),
    ]);
    assert_ne!(leak.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&leak.stderr).contains("leakage"));
    assert!(!run.root.join("leak/report.txt").exists());

    // a forecast of one held-out day writes 24 hourly rows
    ok(&["forecast", "--config", &run.cfg(), "--checkpoint", &run.path("train/model.ckpt"), "--out", &run.path("fc")]);
    assert_eq!(body(&run.root.join("fc/forecast.tsv")).len(), 25);
    ok(&["forecast", "--config", &run.cfg(), "--model", "gp", "--out", &run.path("fc_gp")]);
}

#[test]
fn toy_checkpoint_is_refused_on_load_data() {
    let run = LoadRun::new();
    train_toy(&run.root.join("toy"), &[]);
    let out = adacnp(&["eval", "--config", &run.cfg(), "--checkpoint", &run.path("toy/model.ckpt"), "--out", &run.path("x")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_toy_training_lowers_the_logged_moving_average() {
    let dir = tempfile::tempdir().unwrap();
    let mut drops = Vec::new();
    for seed in 0..10 {
        let out = dir.path().join(format!("s{seed}"));
        ok(&["train", "--seed", &seed.to_string(), "--out", s(&out)]);
        let rows = body(&out.join("loss.tsv"));
        let ma: Vec<f64> = rows[1..].iter().map(|r| r.split('\t').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(ma.len(), 2000);
        // moving average at the end of the first and of the last decile
        drops.push(ma[199] - ma[1999]);
    }
    drops.sort_by(f64::total_cmp);
    let median = 0.5 * (drops[4] + drops[5]);
    assert!(median > 0.0, "median drop {median}: {drops:?}");
}
