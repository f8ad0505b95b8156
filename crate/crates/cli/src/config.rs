//! Resolved run configuration: defaults, then a `key = value` file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adacnp::metrics::parse_key_values;

use crate::CliError;

pub const SUBCOMMANDS: [&str; 6] = ["gen-toy", "gen-load", "detect", "train", "eval", "forecast"];

const ALL: &[&str] = &SUBCOMMANDS;
const MODEL: &[&str] = &["train", "eval", "forecast"];
const TOY: &[&str] = &["gen-toy", "train", "eval", "forecast"];
const DATA: &[&str] = &["detect", "train", "eval", "forecast"];
const SPLIT: &[&str] = &["train", "eval", "forecast"];
const TRAIN: &[&str] = &["train"];
const EVAL: &[&str] = &["eval", "forecast"];

/// One configuration key.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub commands: &'static [&'static str],
}

macro_rules! keys {
    ($($name:literal, $default:literal, $cmds:expr, $help:literal;)*) => {
        pub const KEYS: &[Key] = &[$(Key { name: $name, default: $default, help: $help, commands: $cmds }),*];
    };
}

keys! {
    "seed", "0", ALL, "Seed for sampling, initialization and context draws";
    "out", "out", ALL, "Output directory";
    "workers", "1", EVAL, "Worker threads for evaluation fan-out";
    "experiment", "toy", MODEL, "Which experiment: toy or load";
    "model", "adacnp", MODEL, "Model kind: adacnp, cnp or gp";

    "threshold", "1", TOY, "Phase-transition threshold x_c";
    "x_lo", "-2", TOY, "Lower end of the toy input interval";
    "x_hi", "3", TOY, "Upper end of the toy input interval";
    "slope", "-2..2", TOY, "Range of the linear slope";
    "intercept", "-1..1", TOY, "Range of the linear intercept";
    "amplitude", "0.5..2", TOY, "Range of the sinusoid amplitude";
    "frequency", "0.5..2", TOY, "Range of the sinusoid frequency";
    "phase", "0..6.283185307179586", TOY, "Range of the sinusoid phase";
    "noise_var_normal", "0.01..0.09", TOY, "Range of the noise variance below the threshold";
    "noise_var_extreme", "0.04..0.25", TOY, "Range of the noise variance above the threshold";
    "toy_tasks", "10", &["gen-toy"], "Number of tasks to write";
    "toy_points", "100", &["gen-toy"], "Points sampled per task";

    "fixture_start", "2019-01-01", &["gen-load"], "First day of the synthetic series";
    "fixture_days", "1096", &["gen-load"], "Number of days to generate";
    "fixture_extremes", "60", &["gen-load"], "Number of injected extreme days";
    "fixture_holidays", "true", &["gen-load"], "Mark fixed-date holidays";

    "input", "load.csv", DATA, "Hourly CSV with timestamp, load and temperature columns";
    "holidays", "", DATA, "File of holiday dates, one per line (empty for none)";
    "timestamp_column", "timestamp", DATA, "Name of the timestamp column";
    "load_column", "load", DATA, "Name of the load column";
    "temperature_column", "temperature", DATA, "Name of the temperature column";

    "half_window", "7", &["detect"], "Days on each side of the candidate day";
    "k", "3", &["detect"], "Threshold in window standard deviations";
    "dtw_cost", "absolute", &["detect"], "Local DTW cost: absolute or squared";
    "dtw_band", "none", &["detect"], "Sakoe-Chiba band half-width, or none";
    "normalize", "false", &["detect"], "Divide each day by its mean before comparing";
    "exclude_self", "false", &["detect"], "Leave the candidate out of its window statistics";

    "labels", "labels.tsv", SPLIT, "Day labels written by detect";
    "test_fraction", "0.2", SPLIT, "Share of each regime held out for testing";
    "split_seed", "0", SPLIT, "Seed of the stratified split";
    "t_ref", "18", SPLIT, "Reference temperature of the heating and cooling terms";
    "temp_terms", "t2,t3,hdd,cdd", SPLIT, "Temperature transforms: any of t2, t3, hdd, cdd";

    "iterations", "2000", TRAIN, "Training iterations";
    "context_size", "5..20", TRAIN, "Context size range per episode";
    "target_size", "10..20", TRAIN, "Target size range per episode";
    "learning_rate", "0.001", TRAIN, "Adam learning rate";
    "temperature", "1", TRAIN, "Softmax temperature of the attention weights";
    "log_stride", "1", TRAIN, "Log the loss every this many iterations";
    "window", "100", TRAIN, "Moving-average window of the loss curve";
    "batch_episodes", "1", TRAIN, "Episodes averaged per update";
    "embedding_dim", "32", TRAIN, "Embedding width";
    "representation_dim", "128", TRAIN, "Representation width";
    "encoder_hidden", "128,128", TRAIN, "Encoder hidden widths";
    "decoder_hidden", "128,128", TRAIN, "Decoder hidden widths";
    "embedding_hidden", "64", TRAIN, "Embedding network hidden widths";
    "scorer_hidden", "64", TRAIN, "Scorer hidden widths";
    "activation", "relu", TRAIN, "Hidden activation: relu or tanh";

    "checkpoint", "model.ckpt", EVAL, "Checkpoint written by train (ignored for gp)";
    "eval_context_size", "16", EVAL, "Context points per prediction";
    "resamples", "10", &["eval"], "Context resamples per evaluation";
    "eval_set", "extreme", EVAL, "Evaluated days: normal, extreme or historical";
    "quantiles", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", &["eval"], "Pinball quantile levels";
    "eval_tasks", "100", &["eval", "forecast"], "Held-out toy tasks";
    "eval_context_sizes", "5,10,15", &["eval"], "Toy context sizes";
    "eval_targets", "50", &["eval"], "Toy targets per task";
    "toy_eval_seed", "1000003", &["eval", "forecast"], "Seed of the held-out toy tasks";
    "date", "", &["forecast"], "Day to forecast (default: first day of eval_set)";
    "toy_task", "0", &["forecast"], "Index of the held-out toy task to forecast";
    "forecast_points", "200", &["forecast"], "Grid points of the toy forecast";
}

pub fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

/// Every key relevant to one subcommand, resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: String,
    values: BTreeMap<&'static str, (String, Source)>,
}

impl RunConfig {
    /// Defaults for `subcommand`, overlaid by `file` text and then `flags`.
    pub fn resolve(subcommand: &str, file: Option<&str>, flags: &[(String, String)]) -> Result<Self, CliError> {
        if !SUBCOMMANDS.contains(&subcommand) {
            return Err(CliError::Usage(format!("unknown subcommand `{subcommand}`")));
        }
        let mut values: BTreeMap<&'static str, (String, Source)> = KEYS
            .iter()
            .filter(|k| k.commands.contains(&subcommand))
            .map(|k| (k.name, (k.default.to_string(), Source::Default)))
            .collect();
        if let Some(text) = file {
            let kv = parse_key_values(text).map_err(|e| CliError::Usage(format!("config file: {e}")))?;
            for (k, v) in kv {
                let name = k.replace('-', "_");
                let spec = key(&name).ok_or_else(|| CliError::Usage(format!("unknown config key `{k}`")))?;
                // keys of other subcommands may share the file
                if let Some(slot) = values.get_mut(spec.name) {
                    *slot = (v, Source::File);
                }
            }
        }
        for (k, v) in flags {
            let name = k.replace('-', "_");
            let slot = values
                .get_mut(name.as_str())
                .ok_or_else(|| CliError::Usage(format!("`--{}` does not apply to {subcommand}", flag_name(&name))))?;
            *slot = (v.clone(), Source::Flag);
        }
        Ok(Self { subcommand: subcommand.to_string(), values })
    }

    pub fn raw(&self, name: &str) -> &str {
        &self.values.get(name).unwrap_or_else(|| panic!("key `{name}` is not defined for {}", self.subcommand)).0
    }

    pub fn source(&self, name: &str) -> Source {
        self.values.get(name).map_or(Source::Default, |v| v.1)
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("bad value `{raw}` for `{name}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Usage(format!("bad item `{s}` in `{name}`: {e}")))
            })
            .collect()
    }

    /// Empty string means "not given".
    pub fn path(&self, name: &str) -> Option<PathBuf> {
        let raw = self.raw(name);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn out(&self, file: impl AsRef<Path>) -> PathBuf {
        self.out_dir().join(file)
    }

    /// `key = value` lines of everything that determines the outputs. The
    /// output directory is left out so two runs into different directories
    /// write identical files.
    pub fn replay_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("tool = adacnp {}", env!("CARGO_PKG_VERSION")),
            format!("subcommand = {}", self.subcommand),
        ];
        for k in KEYS {
            if k.name == "out" {
                continue;
            }
            if let Some((v, _)) = self.values.get(k.name) {
                lines.push(format!("{} = {v}", k.name));
            }
        }
        lines
    }

    /// Header for line-oriented text outputs.
    pub fn header(&self) -> String {
        self.replay_lines().iter().map(|l| format!("# {l}\n")).collect()
    }

    pub fn metadata(&self) -> String {
        self.replay_lines().iter().map(|l| format!("{l}\n")).collect()
    }
}
