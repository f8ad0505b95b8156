//! Typed views of a [`RunConfig`] and the data-preparation steps shared by
//! several subcommands.

use std::collections::BTreeMap;

use adacnp::detect::{detect_extremes, DetectConfig, DtwConfig, ExtremeLabeling, LocalCost};
use adacnp::load::{
    build_day_records, ingest, read_holidays, split_and_standardize, DataSplit, DayRecord, FeatureConfig,
    HourlySeries, Schema, TempTerm,
};
use adacnp::models::{ModelConfig, ModelKind};
use adacnp::numeric::Activation;
use adacnp::synth::{Range, ToyConfig};
use adacnp::training::{EvalConfig, Pool, SizeRange, TrainConfig};
use adacnp::toy::ToyEvalConfig;
use adacnp::Regime;
use chrono::NaiveDate;

use crate::config::RunConfig;
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Toy,
    Load,
}

pub fn experiment(cfg: &RunConfig) -> Result<Experiment> {
    match cfg.raw("experiment") {
        "toy" => Ok(Experiment::Toy),
        "load" => Ok(Experiment::Load),
        other => Err(CliError::Usage(format!("unknown experiment `{other}` (toy, load)"))),
    }
}

pub fn model_kind(cfg: &RunConfig) -> Result<ModelKind> {
    Ok(cfg.raw("model").parse::<ModelKind>()?)
}

fn range(cfg: &RunConfig, name: &str) -> Result<Range> {
    let raw = cfg.raw(name);
    let bad = || CliError::Usage(format!("`{name}` must look like lo..hi, got `{raw}`"));
    let (lo, hi) = raw.split_once("..").ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(Range::new(lo, hi))
}

pub fn toy_config(cfg: &RunConfig) -> Result<ToyConfig> {
    let c = ToyConfig {
        threshold: cfg.get("threshold")?,
        x_lo: cfg.get("x_lo")?,
        x_hi: cfg.get("x_hi")?,
        slope: range(cfg, "slope")?,
        intercept: range(cfg, "intercept")?,
        amplitude: range(cfg, "amplitude")?,
        frequency: range(cfg, "frequency")?,
        phase: range(cfg, "phase")?,
        noise_var_normal: range(cfg, "noise_var_normal")?,
        noise_var_extreme: range(cfg, "noise_var_extreme")?,
    };
    c.validate()?;
    Ok(c)
}

pub fn detect_config(cfg: &RunConfig) -> Result<DetectConfig> {
    let band = match cfg.raw("dtw_band") {
        "none" | "" => None,
        _ => Some(cfg.get("dtw_band")?),
    };
    Ok(DetectConfig {
        half_window: cfg.get("half_window")?,
        k: cfg.get("k")?,
        dtw: DtwConfig { cost: cfg.get::<LocalCost>("dtw_cost")?, band },
        normalize: cfg.get("normalize")?,
        exclude_self: cfg.get("exclude_self")?,
    })
}

pub fn schema(cfg: &RunConfig) -> Schema {
    Schema {
        timestamp: cfg.raw("timestamp_column").to_string(),
        load: cfg.raw("load_column").to_string(),
        temperature: cfg.raw("temperature_column").to_string(),
    }
}

pub fn feature_config(cfg: &RunConfig) -> Result<FeatureConfig> {
    Ok(FeatureConfig { t_ref: cfg.get("t_ref")?, temp_terms: cfg.list::<TempTerm>("temp_terms")? })
}

pub fn model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    Ok(ModelConfig {
        embedding_dim: cfg.get("embedding_dim")?,
        representation_dim: cfg.get("representation_dim")?,
        encoder_hidden: cfg.list("encoder_hidden")?,
        decoder_hidden: cfg.list("decoder_hidden")?,
        embedding_hidden: cfg.list("embedding_hidden")?,
        scorer_hidden: cfg.list("scorer_hidden")?,
        temperature: cfg.get("temperature")?,
        activation: cfg.get::<Activation>("activation")?,
    })
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let c = TrainConfig {
        iterations: cfg.get("iterations")?,
        context_size: cfg.get::<SizeRange>("context_size")?,
        target_size: cfg.get::<SizeRange>("target_size")?,
        learning_rate: cfg.get("learning_rate")?,
        temperature: cfg.get("temperature")?,
        seed: cfg.get("seed")?,
        log_stride: cfg.get("log_stride")?,
        window: cfg.get("window")?,
        batch_episodes: cfg.get("batch_episodes")?,
    };
    c.validate()?;
    Ok(c)
}

pub fn eval_config(cfg: &RunConfig) -> Result<EvalConfig> {
    Ok(EvalConfig {
        context_size: cfg.get("eval_context_size")?,
        resamples: cfg.get("resamples")?,
        seed: cfg.get("seed")?,
        workers: cfg.get("workers")?,
        levels: cfg.list("quantiles")?,
    })
}

pub fn toy_eval_config(cfg: &RunConfig) -> Result<ToyEvalConfig> {
    Ok(ToyEvalConfig {
        tasks: cfg.get("eval_tasks")?,
        context_sizes: cfg.list("eval_context_sizes")?,
        targets: cfg.get("eval_targets")?,
        seed: cfg.get("toy_eval_seed")?,
    })
}

/// Hourly series with the optional holiday list attached.
pub fn load_series(cfg: &RunConfig) -> Result<HourlySeries> {
    let input = cfg
        .path("input")
        .ok_or_else(|| CliError::Usage("`input` is required".into()))?;
    let mut series = ingest(&input, &schema(cfg))?;
    if let Some(h) = cfg.path("holidays") {
        series.holidays = read_holidays(&h)?;
    }
    Ok(series)
}

pub fn detect_series(series: &HourlySeries, dcfg: &DetectConfig) -> Result<ExtremeLabeling> {
    Ok(detect_extremes(&series.daily_load_curves()?, dcfg)?)
}

/// Builds features, attaches labels and splits.
pub fn split_series(
    series: &HourlySeries,
    labels: &BTreeMap<NaiveDate, Regime>,
    features: &FeatureConfig,
    test_fraction: f64,
    seed: u64,
) -> Result<DataSplit> {
    let records = build_day_records(series, features)?;
    Ok(split_and_standardize(&records, labels, test_fraction, seed)?)
}

pub fn read_labels(cfg: &RunConfig) -> Result<BTreeMap<NaiveDate, Regime>> {
    let path = cfg
        .path("labels")
        .ok_or_else(|| CliError::Usage("`labels` is required".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| adacnp::Error::io(&path, e))?;
    Ok(ExtremeLabeling::parse_labels(&text)?.into_iter().collect())
}

pub fn prepare_split(cfg: &RunConfig) -> Result<DataSplit> {
    let series = load_series(cfg)?;
    let labels = read_labels(cfg)?;
    split_series(&series, &labels, &feature_config(cfg)?, cfg.get("test_fraction")?, cfg.get("split_seed")?)
}

/// The day set named by `eval_set`, as records and as a pool.
pub fn eval_records<'a>(split: &'a DataSplit, which: &str) -> Result<(Vec<&'a DayRecord>, Pool)> {
    let records: Vec<&DayRecord> = match which {
        "normal" => split.test_normal.iter().collect(),
        "extreme" => split.test_extreme.iter().collect(),
        "historical" => split.historical(),
        other => return Err(CliError::Usage(format!("unknown eval_set `{other}` (normal, extreme, historical)"))),
    };
    if records.is_empty() {
        return Err(CliError::Usage(format!("eval_set `{which}` is empty; raise test_fraction")));
    }
    let pool = adacnp::load::records_to_pool(&records)?;
    Ok((records, pool))
}
