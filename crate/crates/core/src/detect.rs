//! Extreme-day labelling from dynamic-time-warping distances.
//!
//! Each day is scored by its mean DTW distance to the other days of a ±h day
//! window. A day is extreme when its score exceeds the mean of the window's
//! scores by more than k population standard deviations.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::Regime;

pub const HOURS: usize = 24;

/// One day's 24 hourly values.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyCurve {
    pub date: NaiveDate,
    values: Vec<f64>,
}

impl DailyCurve {
    pub fn new(date: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.len() != HOURS {
            return Err(Error::contract(format!("{date}: expected {HOURS} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("{date}: non-finite load value")));
        }
        Ok(Self { date, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalCost {
    Absolute,
    Squared,
}

impl LocalCost {
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalCost::Absolute => (a - b).abs(),
            LocalCost::Squared => (a - b) * (a - b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LocalCost::Absolute => "absolute",
            LocalCost::Squared => "squared",
        }
    }
}

impl std::str::FromStr for LocalCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(LocalCost::Absolute),
            "squared" => Ok(LocalCost::Squared),
            other => Err(Error::contract(format!("unknown DTW cost `{other}` (absolute, squared)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwConfig {
    pub cost: LocalCost,
    /// Sakoe-Chiba band half width; `None` uses the full matrix.
    pub band: Option<usize>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            cost: LocalCost::Absolute,
            band: None,
        }
    }
}

/// Full-matrix DTW with absolute-difference cost.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    dtw_with(a, b, &DtwConfig::default())
}

pub fn dtw_with(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::contract("DTW needs two nonempty sequences"));
    }
    let band = cfg.band.unwrap_or(usize::MAX);
    if band < n.abs_diff(m) {
        return Err(Error::contract(format!(
            "band {band} is narrower than the length difference {}",
            n.abs_diff(m)
        )));
    }
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            if i.abs_diff(j) > band {
                cur[j] = f64::INFINITY;
                continue;
            }
            let c = cfg.cost.eval(a[i], b[j]);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[j],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = c + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub half_window: usize,
    pub k: f64,
    pub dtw: DtwConfig,
    /// Divide each day by its own mean before comparing.
    pub normalize: bool,
    /// Leave the candidate day's own score out of the window statistics.
    pub exclude_self: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            half_window: 7,
            k: 3.0,
            dtw: DtwConfig::default(),
            normalize: false,
            exclude_self: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayDiagnostics {
    pub date: NaiveDate,
    pub score: f64,
    pub window_mean: f64,
    pub window_std: f64,
    pub label: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeLabeling {
    pub days: Vec<DayDiagnostics>,
}

impl ExtremeLabeling {
    pub fn extremes(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.iter().filter(|d| d.label.is_extreme()).map(|d| d.date)
    }

    pub fn label_of(&self, date: NaiveDate) -> Option<Regime> {
        self.days
            .binary_search_by_key(&date, |d| d.date)
            .ok()
            .map(|i| self.days[i].label)
    }

    pub fn to_label_table(&self) -> String {
        let mut s = String::from("date\tlabel\n");
        for d in &self.days {
            let _ = writeln!(s, "{}\t{}", d.date, d.label.name());
        }
        s
    }

    pub fn to_diagnostics_table(&self) -> String {
        let mut s = String::from("date\tscore\twindow_mean\twindow_std\n");
        for d in &self.days {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", d.date, d.score, d.window_mean, d.window_std);
        }
        s
    }

    /// Reads a `date  label` table as written by [`Self::to_label_table`].
    pub fn parse_labels(text: &str) -> Result<Vec<(NaiveDate, Regime)>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("date") {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(d), Some(l)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `date<TAB>label`".into(),
                });
            };
            let date = d.parse().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad date `{d}`: {e}"),
            })?;
            let label = l.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad label `{l}`"),
            })?;
            out.push((date, label));
        }
        Ok(out)
    }
}

fn window(d: usize, n: usize, h: usize) -> std::ops::RangeInclusive<usize> {
    d.saturating_sub(h)..=(d + h).min(n - 1)
}

/// Labels every day, using truncated windows at the ends of the series.
pub fn detect_extremes(days: &[DailyCurve], cfg: &DetectConfig) -> Result<ExtremeLabeling> {
    let h = cfg.half_window;
    if h == 0 {
        return Err(Error::contract("half window must be at least 1"));
    }
    if days.len() < 2 * h + 1 {
        return Err(Error::contract(format!(
            "need at least {} days for one full window, got {}",
            2 * h + 1,
            days.len()
        )));
    }
    if !(cfg.k >= 0.0) {
        return Err(Error::contract(format!("k must be nonnegative, got {}", cfg.k)));
    }
    if days.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(Error::data("days must be in strictly increasing date order"));
    }
    let curves: Vec<Vec<f64>> = days
        .iter()
        .map(|d| {
            if !cfg.normalize {
                return Ok(d.values.clone());
            }
            let mean = d.values.iter().sum::<f64>() / HOURS as f64;
            if mean == 0.0 {
                return Err(Error::data(format!("{}: zero daily mean, cannot normalize", d.date)));
            }
            Ok(d.values.iter().map(|v| v / mean).collect())
        })
        .collect::<Result<_>>()?;

    let n = days.len();
    let mut dist: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..n {
        for j in i + 1..=(i + h).min(n - 1) {
            dist.insert((i, j), dtw_with(&curves[i], &curves[j], &cfg.dtw)?);
        }
    }
    let pair = |i: usize, j: usize| dist[&(i.min(j), i.max(j))];
    let scores: Vec<f64> = (0..n)
        .map(|d| {
            let others: Vec<usize> = window(d, n, h).filter(|&j| j != d).collect();
            others.iter().map(|&j| pair(d, j)).sum::<f64>() / others.len() as f64
        })
        .collect();

    let days = (0..n)
        .map(|d| {
            let members: Vec<f64> = window(d, n, h)
                .filter(|&j| !(cfg.exclude_self && j == d))
                .map(|j| scores[j])
                .collect();
            let m = members.len() as f64;
            let mean = members.iter().sum::<f64>() / m;
            let std = (members.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / m).sqrt();
            let extreme = scores[d] > mean + cfg.k * std;
            DayDiagnostics {
                date: days[d].date,
                score: scores[d],
                window_mean: mean,
                window_std: std,
                label: if extreme { Regime::Extreme } else { Regime::Normal },
            }
        })
        .collect();
    Ok(ExtremeLabeling { days })
}
