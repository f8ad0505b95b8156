//! Evaluation metrics: percentage MSE, Gaussian NLL and pinball loss.
//!
//! All metrics expect standardized targets. `mse_percent` is the mean squared
//! error multiplied by 100; pinball loss is averaged over quantile levels
//! whose forecasts come from the Gaussian predictive quantiles `μ + σ·z_q`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::models::GaussianPrediction;
use crate::numeric::Matrix;

/// The nine deciles used for the pinball loss by default.
pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Mean of `0.5·ln(2πσ²) + (y−μ)²/(2σ²)` over all entries.
pub(crate) fn gaussian_nll_values(mean: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    if mean.len() != var.len() || mean.len() != y.len() || mean.is_empty() {
        return Err(Error::Dimension {
            op: "gaussian_nll",
            left: (mean.len(), var.len()),
            right: (y.len(), y.len()),
        });
    }
    let mut total = 0.0;
    for ((&m, &v), &t) in mean.iter().zip(var).zip(y) {
        if !(v > 0.0) {
            return Err(Error::contract(format!("nonpositive variance {v}")));
        }
        let r = t - m;
        total += 0.5 * (2.0 * PI * v).ln() + r * r / (2.0 * v);
    }
    Ok(total / mean.len() as f64)
}

/// Mean per-entry Gaussian negative log-likelihood.
pub fn nll_mean(pred: &GaussianPrediction, truth: &Matrix) -> Result<f64> {
    check_same_shape("nll_mean", pred.mean(), truth)?;
    gaussian_nll_values(pred.mean().as_slice(), pred.var().as_slice(), truth.as_slice())
}

/// Mean squared error × 100.
pub fn mse_percent(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    check_same_shape("mse_percent", pred, truth)?;
    if pred.is_empty() {
        return Err(Error::contract("mse_percent of an empty set"));
    }
    let sse: f64 = pred
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(100.0 * sse / pred.len() as f64)
}

/// Quantile loss of one forecast.
pub fn pinball_point(y: f64, forecast: f64, level: f64) -> f64 {
    if y >= forecast {
        level * (y - forecast)
    } else {
        (1.0 - level) * (forecast - y)
    }
}

/// Pinball loss averaged over points, output dimensions and levels.
pub fn pinball(pred: &GaussianPrediction, truth: &Matrix, levels: &[f64]) -> Result<f64> {
    check_same_shape("pinball", pred.mean(), truth)?;
    if levels.is_empty() {
        return Err(Error::contract("pinball needs at least one quantile level"));
    }
    if let Some(bad) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::contract(format!("quantile level {bad} outside (0, 1)")));
    }
    if pred.var().as_slice().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::contract("pinball needs nonnegative variances"));
    }
    let mut total = 0.0;
    for &q in levels {
        let z = inverse_normal_cdf(q)?;
        for ((&m, &v), &y) in pred
            .mean()
            .as_slice()
            .iter()
            .zip(pred.var().as_slice())
            .zip(truth.as_slice())
        {
            total += pinball_point(y, m + v.sqrt() * z, q);
        }
    }
    Ok(total / (levels.len() * truth.len()) as f64)
}

/// Standard normal quantile function (Wichura's AS 241 rational approximation).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::contract(format!("probability {p} outside (0, 1)")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_7e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return Ok(q * num / den);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -value } else { value })
}

/// Mean and spread of one metric over resamples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over resamples (0 for a single resample).
    pub spread: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("no values to summarize"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            spread,
            count: values.len(),
        })
    }
}

/// Metrics of one evaluation, summarized over context resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mse_percent: MetricSummary,
    pub nll: MetricSummary,
    pub pinball: MetricSummary,
    /// Evaluation targets per resample.
    pub targets: usize,
    pub output_dim: usize,
}

/// Metrics of a single pass over the evaluation targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues {
    pub mse_percent: f64,
    pub nll: f64,
    pub pinball: f64,
}

impl MetricValues {
    pub fn compute(pred: &GaussianPrediction, truth: &Matrix, levels: &[f64]) -> Result<Self> {
        Ok(Self {
            mse_percent: mse_percent(pred.mean(), truth)?,
            nll: nll_mean(pred, truth)?,
            pinball: pinball(pred, truth, levels)?,
        })
    }
}

impl MetricsReport {
    pub fn from_resamples(values: &[MetricValues], targets: usize, output_dim: usize) -> Result<Self> {
        let pick = |f: fn(&MetricValues) -> f64| values.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            mse_percent: MetricSummary::from_values(&pick(|v| v.mse_percent))?,
            nll: MetricSummary::from_values(&pick(|v| v.nll))?,
            pinball: MetricSummary::from_values(&pick(|v| v.pinball))?,
            targets,
            output_dim,
        })
    }

    /// `key = value` lines, one per metric statistic.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (name, m) in [
            ("mse_percent", &self.mse_percent),
            ("nll", &self.nll),
            ("pinball", &self.pinball),
        ] {
            let _ = writeln!(s, "{name}.mean = {}", m.mean);
            let _ = writeln!(s, "{name}.spread = {}", m.spread);
            let _ = writeln!(s, "{name}.count = {}", m.count);
        }
        let _ = writeln!(s, "spread.kind = sample standard deviation over context resamples");
        let _ = writeln!(s, "targets = {}", self.targets);
        let _ = writeln!(s, "output_dim = {}", self.output_dim);
        s
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::data(format!("report is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::data(format!("`{k}` is not a number")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::data(format!("`{k}` is not a count")))
        };
        let summary = |name: &str| -> Result<MetricSummary> {
            Ok(MetricSummary {
                mean: num(&format!("{name}.mean"))?,
                spread: num(&format!("{name}.spread"))?,
                count: count(&format!("{name}.count"))?,
            })
        };
        Ok(Self {
            mse_percent: summary("mse_percent")?,
            nll: summary("nll")?,
            pinball: summary("pinball")?,
            targets: count("targets")?,
            output_dim: count("output_dim")?,
        })
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
