//! One function per subcommand. Each returns the files it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adacnp::fixture::{generate_fixture, FixtureConfig};
use adacnp::load::{date_id, DataSplit, DayRecord, HOURS};
use adacnp::metrics::parse_key_values;
use adacnp::models::{
    ConditionalPredictor, GaussianPrediction, GpPredictor, ModelBundle, ModelKind, NeuralPredictor, TargetBatch,
};
use adacnp::numeric::Matrix;
use adacnp::synth::{sample_points, sample_task, PhaseTransitionTask};
use adacnp::toy::{evaluate_toy, test_tasks, ToyEvalConfig, ToySuite};
use adacnp::training::{audit_contexts, evaluate, fork_rng, train, LossCurve};
use adacnp::Regime;
use chrono::NaiveDate;
use rand::seq::index;

use crate::config::{RunConfig, Source};
use crate::pipeline::{self, Experiment};
use crate::plot::{Chart, Layer};
use crate::{CliError, Result};

const BLUE: &str = "#2f6db5";
const ORANGE: &str = "#d9822b";
const GREY: &str = "#555555";

pub fn dispatch(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    match cfg.subcommand.as_str() {
        "gen-toy" => gen_toy(cfg),
        "gen-load" => gen_load(cfg),
        "detect" => detect(cfg),
        "train" => train_cmd(cfg),
        "eval" => eval_cmd(cfg),
        "forecast" => forecast(cfg),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| adacnp::Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| adacnp::Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn positive(cfg: &RunConfig, key: &str) -> Result<usize> {
    let n: usize = cfg.get(key)?;
    if n == 0 {
        return Err(CliError::Usage(format!("`{key}` must be at least 1")));
    }
    Ok(n)
}

pub fn gen_toy(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let toy = pipeline::toy_config(cfg)?;
    let tasks = positive(cfg, "toy_tasks")?;
    let points = positive(cfg, "toy_points")?;
    let mut rng = fork_rng(cfg.get("seed")?, 0);

    let mut task_table = cfg.header();
    task_table.push_str(
        "task\tthreshold\tslope\tintercept\tamplitude\tfrequency\tphase\tnoise_var_normal\tnoise_var_extreme\tx_lo\tx_hi\n",
    );
    let mut sample_table = cfg.header();
    sample_table.push_str("task\tx\ty\tlabel\n");
    let mut first = None;
    for k in 0..tasks {
        let t = sample_task(&mut rng, &toy)?;
        let s = sample_points(&t, points, &mut rng)?;
        let _ = writeln!(
            task_table,
            "{k}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.threshold, t.slope, t.intercept, t.amplitude, t.frequency, t.phase, t.noise_var_normal,
            t.noise_var_extreme, t.x_lo, t.x_hi
        );
        for i in 0..s.len() {
            let _ = writeln!(sample_table, "{k}\t{}\t{}\t{}", s.xs[i], s.ys[i], s.labels[i].name());
        }
        if k == 0 {
            first = Some((t, s));
        }
    }
    let (t, s) = first.expect("at least one task");
    let mut chart = Chart::new("Toy task 0", "x", "y");
    chart.layers.push(Layer::Line { xy: mean_curve(&t, 300), color: GREY, label: "true mean".into() });
    for (regime, color) in [(Regime::Normal, BLUE), (Regime::Extreme, ORANGE)] {
        let xy = (0..s.len()).filter(|&i| s.labels[i] == regime).map(|i| (s.xs[i], s.ys[i])).collect();
        chart.layers.push(Layer::Points { xy, color, label: regime.name().into() });
    }
    chart.layers.push(Layer::VRule { x: t.threshold, color: GREY });

    Ok(vec![
        write(&cfg.out("tasks.tsv"), task_table)?,
        write(&cfg.out("samples.tsv"), sample_table)?,
        write(&cfg.out("toy.svg"), chart.render(&cfg.metadata()))?,
    ])
}

fn mean_curve(t: &PhaseTransitionTask, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let x = t.x_lo + (t.x_hi - t.x_lo) * i as f64 / (n - 1) as f64;
            (x, t.mean(x))
        })
        .collect()
}

pub fn gen_load(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let fc = FixtureConfig {
        start: cfg.get::<NaiveDate>("fixture_start")?,
        days: positive(cfg, "fixture_days")?,
        extreme_days: cfg.get("fixture_extremes")?,
        holidays: cfg.get("fixture_holidays")?,
        seed: cfg.get("seed")?,
    };
    let f = generate_fixture(&fc)?;
    let header = cfg.header();
    Ok(vec![
        write(&cfg.out("load.csv"), format!("{header}{}", f.to_csv()))?,
        write(&cfg.out("holidays.txt"), format!("{header}{}", f.holidays_text()))?,
        write(&cfg.out("injected_extremes.txt"), format!("{header}{}", f.extremes_text()))?,
    ])
}

pub fn detect(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let series = pipeline::load_series(cfg)?;
    let labeling = pipeline::detect_series(&series, &pipeline::detect_config(cfg)?)?;
    let header = cfg.header();
    let n = labeling.extremes().count();
    eprintln!("{n} extreme days out of {}", labeling.days.len());
    Ok(vec![
        write(&cfg.out("labels.tsv"), format!("{header}{}", labeling.to_label_table()))?,
        write(&cfg.out("diagnostics.tsv"), format!("{header}{}", labeling.to_diagnostics_table()))?,
    ])
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let kind = pipeline::model_kind(cfg)?
        .neural()
        .ok_or_else(|| CliError::Usage("the gp baseline has nothing to train; use eval or forecast".into()))?;
    let model = pipeline::model_config(cfg)?;
    let tcfg = pipeline::train_config(cfg)?;
    let mut written = Vec::new();
    let outcome = match pipeline::experiment(cfg)? {
        Experiment::Toy => {
            let suite = ToySuite::new(pipeline::toy_config(cfg)?)?;
            train(kind, &suite, &model, &tcfg)?
        }
        Experiment::Load => {
            let split = pipeline::prepare_split(cfg)?;
            written.push(write(&cfg.out("split.txt"), format!("{}{}", cfg.header(), split.header()))?);
            train(kind, &split.historical_pool()?, &model, &tcfg)?
        }
    };
    let meta = cfg.metadata();
    written.push(write(&cfg.out("model.ckpt"), outcome.bundle.to_bytes(&meta))?);
    written.push(write(&cfg.out("init.ckpt"), outcome.initial.to_bytes(&meta))?);
    written.push(write(&cfg.out("loss.tsv"), format!("{}{}", cfg.header(), outcome.curve.to_table()))?);
    written.push(write(&cfg.out("loss.svg"), loss_chart(&outcome.curve).render(&meta))?);
    Ok(written)
}

fn loss_chart(curve: &LossCurve) -> Chart {
    let mut c = Chart::new(
        format!("Training NLL, moving average over {} logged steps", curve.window),
        "iteration",
        "NLL",
    );
    let xy = curve.iterations.iter().zip(&curve.moving_average).map(|(&i, &m)| (i as f64, m)).collect();
    c.layers.push(Layer::Line { xy, color: BLUE, label: "moving average".into() });
    c
}

pub struct Loaded {
    pub kind: ModelKind,
    pub predictor: Box<dyn ConditionalPredictor>,
    /// Input and output width of a neural checkpoint.
    pub dims: Option<(usize, usize)>,
}

/// The predictor named by `model`, loading the checkpoint for neural kinds.
pub fn predictor(cfg: &RunConfig) -> Result<Loaded> {
    let asked = pipeline::model_kind(cfg)?;
    if asked == ModelKind::Gp {
        return Ok(Loaded { kind: ModelKind::Gp, predictor: Box::new(GpPredictor::default()), dims: None });
    }
    let path = cfg
        .path("checkpoint")
        .ok_or_else(|| CliError::Usage("`checkpoint` is required for neural models".into()))?;
    let (bundle, meta) = ModelBundle::load(&path)?;
    let meta = parse_key_values(&meta)?;
    let trained: ModelKind = meta
        .get("model")
        .ok_or_else(|| adacnp::Error::data(format!("{} does not record its model kind", path.display())))?
        .parse()?;
    if cfg.source("model") != Source::Default && trained != asked {
        return Err(CliError::Usage(format!(
            "{} holds a {} model but --model is {}",
            path.display(),
            trained.name(),
            asked.name()
        )));
    }
    if let Some(exp) = meta.get("experiment") {
        if exp != cfg.raw("experiment") {
            return Err(CliError::Usage(format!(
                "{} was trained on the {exp} experiment, not {}",
                path.display(),
                cfg.raw("experiment")
            )));
        }
    }
    let kind = trained.neural().expect("checkpoints hold neural models");
    let dims = Some((bundle.x_dim(), bundle.y_dim()));
    Ok(Loaded { kind: trained, predictor: Box::new(NeuralPredictor { kind, bundle }), dims })
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let loaded = predictor(cfg)?;
    match pipeline::experiment(cfg)? {
        Experiment::Toy => {
            check_dims(&loaded, 1, 1)?;
            eval_toy(cfg, loaded.kind, loaded.predictor.as_ref())
        }
        Experiment::Load => eval_load(cfg, &loaded),
    }
}

fn eval_toy(cfg: &RunConfig, kind: ModelKind, predictor: &dyn ConditionalPredictor) -> Result<Vec<PathBuf>> {
    let suite = ToySuite::new(pipeline::toy_config(cfg)?)?;
    let ecfg = pipeline::toy_eval_config(cfg)?;
    let report = evaluate_toy(predictor, &suite, &ecfg)?;
    let mut text = cfg.header();
    let _ = writeln!(text, "model = {}", kind.name());
    let mut put = |prefix: &str, v: &adacnp::metrics::MetricValues| {
        let _ = writeln!(text, "{prefix}mse_percent = {}", v.mse_percent);
        let _ = writeln!(text, "{prefix}nll = {}", v.nll);
        let _ = writeln!(text, "{prefix}pinball = {}", v.pinball);
    };
    put("", &report.overall);
    for (n_c, v) in &report.by_context_size {
        put(&format!("context_{n_c}."), v);
    }
    let n_c = ecfg.context_sizes[0];
    let (chart, _) = toy_forecast(cfg, &suite, predictor, 0, n_c, 200)?;
    Ok(vec![
        write(&cfg.out("report.txt"), text)?,
        write(&cfg.out("forecast.svg"), chart.render(&cfg.metadata()))?,
    ])
}

fn eval_load(cfg: &RunConfig, loaded: &Loaded) -> Result<Vec<PathBuf>> {
    let (kind, predictor) = (loaded.kind, loaded.predictor.as_ref());
    let split = pipeline::prepare_split(cfg)?;
    let which = cfg.raw("eval_set");
    let (records, pool) = pipeline::eval_records(&split, which)?;
    let hist = split.historical_pool()?;
    check_dims(loaded, hist.x_dim(), hist.y_dim())?;
    let ecfg = pipeline::eval_config(cfg)?;
    let evaluation = evaluate(predictor, &hist, &pool, &ecfg)?;

    let mut written = Vec::new();
    let mut text = cfg.header();
    let _ = writeln!(text, "model = {}", kind.name());
    let _ = writeln!(text, "days = {}", records.len());
    text.push_str(&evaluation.report.to_key_values());
    written.push(write(&cfg.out("report.txt"), text)?);
    for (r, pred) in evaluation.predictions.iter().enumerate() {
        let table = prediction_table(cfg, &split, &records, pred);
        written.push(write(&cfg.out(format!("predictions/resample_{r:02}.tsv")), table)?);
    }
    let chart = day_chart(&split, records[0], &evaluation.predictions[0], 0, kind);
    written.push(write(&cfg.out("forecast.svg"), chart.render(&cfg.metadata()))?);
    Ok(written)
}

/// A checkpoint must match the feature layout of the data it is run on.
fn check_dims(loaded: &Loaded, x_dim: usize, y_dim: usize) -> Result<()> {
    match loaded.dims {
        Some(d) if d != (x_dim, y_dim) => Err(adacnp::Error::data(format!(
            "checkpoint maps {} inputs to {} outputs but the data has {x_dim} features and {y_dim} targets",
            d.0, d.1
        ))
        .into()),
        _ => Ok(()),
    }
}

/// 24 rows per day: standardized truth and prediction, then megawatts.
fn prediction_table(cfg: &RunConfig, split: &DataSplit, records: &[&DayRecord], pred: &GaussianPrediction) -> String {
    let mut s = cfg.header();
    s.push_str("date\thour\ty\tmean\tvar\tload_mw\tmean_mw\tstd_mw\n");
    for (t, r) in records.iter().enumerate() {
        for h in 0..HOURS {
            let (m, v) = (pred.mean()[(t, h)], pred.var()[(t, h)]);
            let _ = writeln!(
                s,
                "{}\t{h}\t{}\t{m}\t{v}\t{}\t{}\t{}",
                r.date,
                r.y[h],
                split.stats.load_mw(h, r.y[h]),
                split.stats.load_mw(h, m),
                v.sqrt() * split.stats.y_scale[h]
            );
        }
    }
    s
}

fn day_chart(split: &DataSplit, r: &DayRecord, pred: &GaussianPrediction, row: usize, kind: ModelKind) -> Chart {
    let hours: Vec<f64> = (0..HOURS).map(|h| h as f64).collect();
    let mw = |h: usize, v: f64| split.stats.load_mw(h, v);
    let mean: Vec<f64> = (0..HOURS).map(|h| mw(h, pred.mean()[(row, h)])).collect();
    let sd: Vec<f64> = (0..HOURS).map(|h| pred.var()[(row, h)].sqrt() * split.stats.y_scale[h]).collect();
    let mut c = Chart::new(format!("{} forecast for {}", kind.name(), r.date), "hour", "load (MW)");
    c.layers.push(Layer::Band {
        x: hours.clone(),
        lo: mean.iter().zip(&sd).map(|(m, s)| m - s).collect(),
        hi: mean.iter().zip(&sd).map(|(m, s)| m + s).collect(),
        color: BLUE,
        label: "mean ± σ".into(),
    });
    c.layers.push(Layer::Line { xy: hours.iter().copied().zip(mean).collect(), color: BLUE, label: "mean".into() });
    c.layers.push(Layer::Line {
        xy: (0..HOURS).map(|h| (h as f64, mw(h, r.y[h]))).collect(),
        color: GREY,
        label: "observed".into(),
    });
    c
}

/// Forecast of held-out toy task `task` over an input grid, in raw units.
fn toy_forecast(
    cfg: &RunConfig,
    suite: &ToySuite,
    predictor: &dyn ConditionalPredictor,
    task: usize,
    n_c: usize,
    points: usize,
) -> Result<(Chart, String)> {
    let ecfg = ToyEvalConfig {
        tasks: cfg.get::<usize>("eval_tasks")?.max(task + 1),
        seed: cfg.get("toy_eval_seed")?,
        ..ToyEvalConfig::default()
    };
    let tasks = test_tasks(suite, &ecfg)?;
    let t = &tasks[task];
    let mut rng = fork_rng(cfg.get("seed")?, 0);
    let ctx = suite.episode(t, n_c, 1, &mut rng)?.context;
    let points = points.max(2);
    let grid: Vec<f64> = (0..points).map(|i| t.x_lo + (t.x_hi - t.x_lo) * i as f64 / (points - 1) as f64).collect();
    let p = predictor.predict(&ctx, &TargetBatch::inputs_only(Matrix::from_vec(points, 1, grid.clone())?)?)?;
    let raw = |z: f64| z * suite.y_scale + suite.y_mean;
    let mean: Vec<f64> = p.mean().as_slice().iter().map(|&z| raw(z)).collect();
    let sd: Vec<f64> = p.var().as_slice().iter().map(|v| v.sqrt() * suite.y_scale).collect();

    let mut table = cfg.header();
    table.push_str("x\tmean\tstd\ttrue_mean\n");
    for i in 0..points {
        let _ = writeln!(table, "{}\t{}\t{}\t{}", grid[i], mean[i], sd[i], t.mean(grid[i]));
    }
    let mut c = Chart::new(format!("Held-out task {task}, {n_c} context points"), "x", "y");
    c.layers.push(Layer::Band {
        x: grid.clone(),
        lo: mean.iter().zip(&sd).map(|(m, s)| m - s).collect(),
        hi: mean.iter().zip(&sd).map(|(m, s)| m + s).collect(),
        color: BLUE,
        label: "mean ± σ".into(),
    });
    c.layers.push(Layer::Line { xy: grid.iter().copied().zip(mean).collect(), color: BLUE, label: "mean".into() });
    c.layers.push(Layer::Line { xy: mean_curve(t, points), color: GREY, label: "true mean".into() });
    let cx = ctx.inputs().as_slice();
    let cy = ctx.outputs().as_slice();
    c.layers.push(Layer::Points {
        xy: cx.iter().zip(cy).map(|(&x, &y)| (x, raw(y))).collect(),
        color: ORANGE,
        label: "context".into(),
    });
    c.layers.push(Layer::VRule { x: t.threshold, color: GREY });
    Ok((c, table))
}

pub fn forecast(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let loaded = predictor(cfg)?;
    let n_c = positive(cfg, "eval_context_size")?;
    let (chart, table) = match pipeline::experiment(cfg)? {
        Experiment::Toy => {
            let suite = ToySuite::new(pipeline::toy_config(cfg)?)?;
            let task: usize = cfg.get("toy_task")?;
            let tasks: usize = cfg.get("eval_tasks")?;
            if task >= tasks {
                return Err(CliError::Usage(format!("toy_task {task} is outside the {tasks} held-out tasks")));
            }
            check_dims(&loaded, 1, 1)?;
            toy_forecast(cfg, &suite, loaded.predictor.as_ref(), task, n_c, positive(cfg, "forecast_points")?)?
        }
        Experiment::Load => forecast_day(cfg, &loaded, n_c)?,
    };
    Ok(vec![
        write(&cfg.out("forecast.tsv"), table)?,
        write(&cfg.out("forecast.svg"), chart.render(&cfg.metadata()))?,
    ])
}

fn forecast_day(cfg: &RunConfig, loaded: &Loaded, n_c: usize) -> Result<(Chart, String)> {
    let (kind, predictor) = (loaded.kind, loaded.predictor.as_ref());
    let split = pipeline::prepare_split(cfg)?;
    let hist = split.historical_pool()?;
    check_dims(loaded, hist.x_dim(), hist.y_dim())?;
    let record: &DayRecord = match cfg.raw("date") {
        "" => pipeline::eval_records(&split, cfg.raw("eval_set"))?.0[0],
        _ => {
            let date: NaiveDate = cfg.get("date")?;
            audit_contexts(&[hist.ids().to_vec()], &[date_id(date)])?;
            split
                .test_normal
                .iter()
                .chain(&split.test_extreme)
                .find(|r| r.date == date)
                .ok_or_else(|| CliError::Usage(format!("{date} has no record in the split")))?
        }
    };
    if hist.len() < n_c {
        return Err(CliError::Usage(format!("only {} historical days for {n_c} context points", hist.len())));
    }
    let mut rng = fork_rng(cfg.get("seed")?, 0);
    let rows = index::sample(&mut rng, hist.len(), n_c).into_vec();
    let (_, ctx) = hist.context(&rows)?;
    let x = Matrix::from_vec(1, record.x.len(), record.x.clone())?;
    let pred = predictor.predict(&ctx, &TargetBatch::inputs_only(x)?)?;

    let mut table = cfg.header();
    table.push_str("date\thour\tobserved_mw\tmean_mw\tstd_mw\n");
    for h in 0..HOURS {
        let _ = writeln!(
            table,
            "{}\t{h}\t{}\t{}\t{}",
            record.date,
            split.stats.load_mw(h, record.y[h]),
            split.stats.load_mw(h, pred.mean()[(0, h)]),
            pred.var()[(0, h)].sqrt() * split.stats.y_scale[h]
        );
    }
    Ok((day_chart(&split, record, &pred, 0, kind), table))
}
