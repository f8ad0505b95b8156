//! Hourly load and temperature data, daily feature records and the
//! historical / test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::seq::SliceRandom;

pub use crate::detect::HOURS;
use crate::detect::DailyCurve;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::training::{fork_rng, Pool};
use crate::Regime;

/// Column names of the hourly input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub timestamp: String,
    pub load: String,
    pub temperature: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load".into(),
            temperature: "temperature".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub load: Vec<f64>,
    pub temperature: Vec<f64>,
    /// Missing hourly instants between the first and last timestamp.
    pub gaps: Vec<NaiveDateTime>,
    pub holidays: BTreeSet<NaiveDate>,
}

impl HourlySeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Days with all 24 hours present, as `(date, load, temperature)`.
    pub fn complete_days(&self) -> BTreeMap<NaiveDate, (Vec<f64>, Vec<f64>)> {
        let mut by_day: BTreeMap<NaiveDate, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((t, l), temp) in self.timestamps.iter().zip(&self.load).zip(&self.temperature) {
            let e = by_day.entry(t.date()).or_default();
            e.0.push(*l);
            e.1.push(*temp);
        }
        by_day.retain(|_, (l, _)| l.len() == HOURS);
        by_day
    }

    /// Load curves of every complete day, for the extreme-day detector.
    pub fn daily_load_curves(&self) -> Result<Vec<DailyCurve>> {
        self.complete_days()
            .into_iter()
            .map(|(d, (l, _))| DailyCurve::new(d, l))
            .collect()
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn ingest(path: &Path, schema: &Schema) -> Result<HourlySeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<HourlySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column `{name}` (have: {})", headers.iter().collect::<Vec<_>>().join(", "))))
    };
    let (ti, li, ki) = (col(&schema.timestamp)?, col(&schema.load)?, col(&schema.temperature)?);

    let mut series = HourlySeries {
        timestamps: Vec::new(),
        load: Vec::new(),
        temperature: Vec::new(),
        gaps: Vec::new(),
        holidays: BTreeSet::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing field {}", i + 1)));
        let ts_raw = field(ti)?;
        let ts = parse_timestamp(ts_raw).ok_or_else(|| bad(format!("bad timestamp `{ts_raw}`")))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(bad(format!("timestamp `{ts_raw}` is not on the hour")));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            let raw = field(i)?;
            let v: f64 = raw.parse().map_err(|_| bad(format!("bad {what} `{raw}`")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite {what}")));
            }
            Ok(v)
        };
        let load = num(li, "load")?;
        let temp = num(ki, "temperature")?;
        if load < 0.0 {
            return Err(Error::data(format!("line {line}: negative load {load}")));
        }
        if let Some(&prev) = series.timestamps.last() {
            if ts <= prev {
                return Err(Error::data(format!(
                    "line {line}: timestamp {ts} does not follow {prev}"
                )));
            }
            let mut t = prev + Duration::hours(1);
            while t < ts {
                series.gaps.push(t);
                t += Duration::hours(1);
            }
        }
        series.timestamps.push(ts);
        series.load.push(load);
        series.temperature.push(temp);
    }
    Ok(series)
}

/// One ISO date per line; blank lines and `#` comments are skipped.
pub fn parse_holidays(text: &str) -> Result<BTreeSet<NaiveDate>> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let d = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad holiday date `{line}`: {e}"),
        })?;
        out.insert(d);
    }
    Ok(out)
}

pub fn read_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_holidays(&text)
}

/// Nonlinear transforms of the hourly temperature forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TempTerm {
    Square,
    Cube,
    Heating,
    Cooling,
}

impl TempTerm {
    pub fn name(self) -> &'static str {
        match self {
            TempTerm::Square => "t2",
            TempTerm::Cube => "t3",
            TempTerm::Heating => "hdd",
            TempTerm::Cooling => "cdd",
        }
    }

    fn eval(self, t: f64, t_ref: f64) -> f64 {
        match self {
            TempTerm::Square => t * t,
            TempTerm::Cube => t * t * t,
            TempTerm::Heating => (t_ref - t).max(0.0),
            TempTerm::Cooling => (t - t_ref).max(0.0),
        }
    }
}

impl std::str::FromStr for TempTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2" => Ok(TempTerm::Square),
            "t3" => Ok(TempTerm::Cube),
            "hdd" => Ok(TempTerm::Heating),
            "cdd" => Ok(TempTerm::Cooling),
            other => Err(Error::contract(format!("unknown temperature term `{other}` (t2, t3, hdd, cdd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub t_ref: f64,
    pub temp_terms: Vec<TempTerm>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            t_ref: 18.0,
            temp_terms: vec![TempTerm::Square, TempTerm::Cube, TempTerm::Heating, TempTerm::Cooling],
        }
    }
}

impl FeatureConfig {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for prefix in ["load_prev", "temp_prev", "temp_next"] {
            names.extend((0..HOURS).map(|h| format!("{prefix}_h{h:02}")));
        }
        for term in &self.temp_terms {
            names.extend((0..HOURS).map(|h| format!("{}_h{h:02}", term.name())));
        }
        names.extend(
            ["weekend", "holiday", "winter", "spring", "summer", "autumn", "year_sin", "year_cos"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }
}

/// Meteorological season index: winter, spring, summer, autumn.
pub fn season(date: NaiveDate) -> usize {
    match date.month() {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

/// Unstandardized features and next-day load of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRecords {
    pub feature_names: Vec<String>,
    pub records: Vec<DayRecord>,
    /// Days that had a predecessor in range but touched a gap.
    pub dropped: Vec<NaiveDate>,
}

/// Features of day `d` from the complete days `d − 1` and `d`.
pub fn build_day_records(series: &HourlySeries, cfg: &FeatureConfig) -> Result<DayRecords> {
    let first = series.timestamps.first().map(|t| t.date());
    let last = series.timestamps.last().map(|t| t.date());
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::contract("empty series"));
    };
    if last <= first {
        return Err(Error::contract("series must cover at least two days"));
    }
    let days = series.complete_days();
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    let mut d = first + Duration::days(1);
    while d <= last {
        match (days.get(&(d - Duration::days(1))), days.get(&d)) {
            (Some(prev), Some(cur)) => records.push(day_record(d, prev, cur, series, cfg)),
            _ => dropped.push(d),
        }
        d += Duration::days(1);
    }
    Ok(DayRecords {
        feature_names: cfg.feature_names(),
        records,
        dropped,
    })
}

fn day_record(
    date: NaiveDate,
    prev: &(Vec<f64>, Vec<f64>),
    cur: &(Vec<f64>, Vec<f64>),
    series: &HourlySeries,
    cfg: &FeatureConfig,
) -> DayRecord {
    let forecast = &cur.1;
    let mut x = Vec::with_capacity(cfg.feature_names().len());
    x.extend_from_slice(&prev.0);
    x.extend_from_slice(&prev.1);
    x.extend_from_slice(forecast);
    for term in &cfg.temp_terms {
        x.extend(forecast.iter().map(|&t| term.eval(t, cfg.t_ref)));
    }
    let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
    x.push(f64::from(u8::from(weekend)));
    x.push(f64::from(u8::from(series.holidays.contains(&date))));
    let s = season(date);
    x.extend((0..4).map(|k| f64::from(u8::from(k == s))));
    let angle = 2.0 * std::f64::consts::PI * f64::from(date.ordinal()) / 365.25;
    x.push(angle.sin());
    x.push(angle.cos());
    DayRecord {
        date,
        x,
        y: cur.0.clone(),
    }
}

/// Affine maps fit on historical records.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
}

fn column_stats(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

impl Standardization {
    pub fn fit(records: &[&DayRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::contract("cannot fit standardization on no records"));
        }
        let xs: Vec<&[f64]> = records.iter().map(|r| r.x.as_slice()).collect();
        let ys: Vec<&[f64]> = records.iter().map(|r| r.y.as_slice()).collect();
        let (x_mean, x_scale) = column_stats(&xs);
        let (y_mean, y_scale) = column_stats(&ys);
        Ok(Self { x_mean, x_scale, y_mean, y_scale })
    }

    pub fn apply(&self, r: &DayRecord) -> DayRecord {
        let f = |v: &[f64], m: &[f64], s: &[f64]| v.iter().zip(m).zip(s).map(|((v, m), s)| (v - m) / s).collect();
        DayRecord {
            date: r.date,
            x: f(&r.x, &self.x_mean, &self.x_scale),
            y: f(&r.y, &self.y_mean, &self.y_scale),
        }
    }

    pub fn invert(&self, r: &DayRecord) -> DayRecord {
        let f = |v: &[f64], m: &[f64], s: &[f64]| v.iter().zip(m).zip(s).map(|((v, m), s)| v * s + m).collect();
        DayRecord {
            date: r.date,
            x: f(&r.x, &self.x_mean, &self.x_scale),
            y: f(&r.y, &self.y_mean, &self.y_scale),
        }
    }

    /// Load in megawatts from a standardized value of hour `h`.
    pub fn load_mw(&self, h: usize, v: f64) -> f64 {
        v * self.y_scale[h] + self.y_mean[h]
    }
}

/// Standardized records split by time-agnostic stratified sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub feature_names: Vec<String>,
    pub historical_normal: Vec<DayRecord>,
    pub historical_extreme: Vec<DayRecord>,
    pub test_normal: Vec<DayRecord>,
    pub test_extreme: Vec<DayRecord>,
    pub stats: Standardization,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Stable pool id of a date.
pub fn date_id(d: NaiveDate) -> u64 {
    d.num_days_from_ce() as u64
}

pub fn records_to_pool(records: &[&DayRecord]) -> Result<Pool> {
    let (Some(first), n) = (records.first(), records.len()) else {
        return Err(Error::contract("no records"));
    };
    let (dx, dy) = (first.x.len(), first.y.len());
    let mut x = Vec::with_capacity(n * dx);
    let mut y = Vec::with_capacity(n * dy);
    for r in records {
        x.extend_from_slice(&r.x);
        y.extend_from_slice(&r.y);
    }
    Pool::new(
        records.iter().map(|r| date_id(r.date)).collect(),
        Matrix::from_vec(n, dx, x)?,
        Matrix::from_vec(n, dy, y)?,
    )
}

impl DataSplit {
    pub fn historical(&self) -> Vec<&DayRecord> {
        self.historical_normal.iter().chain(&self.historical_extreme).collect()
    }

    pub fn historical_pool(&self) -> Result<Pool> {
        records_to_pool(&self.historical())
    }

    pub fn test_pool(&self, regime: Regime) -> Result<Pool> {
        let set = match regime {
            Regime::Normal => &self.test_normal,
            Regime::Extreme => &self.test_extreme,
        };
        records_to_pool(&set.iter().collect::<Vec<_>>())
    }

    /// Key-value document with feature order, statistics and membership.
    pub fn header(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let dates = |v: &[DayRecord]| v.iter().map(|r| r.date.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "feature_count = {}", self.feature_names.len());
        let _ = writeln!(s, "target_count = {HOURS}");
        let _ = writeln!(s, "features = {}", self.feature_names.join(","));
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(s, "split_seed = {}", self.seed);
        let _ = writeln!(s, "x_mean = {}", join(&self.stats.x_mean));
        let _ = writeln!(s, "x_scale = {}", join(&self.stats.x_scale));
        let _ = writeln!(s, "y_mean = {}", join(&self.stats.y_mean));
        let _ = writeln!(s, "y_scale = {}", join(&self.stats.y_scale));
        let _ = writeln!(s, "historical_normal = {}", dates(&self.historical_normal));
        let _ = writeln!(s, "historical_extreme = {}", dates(&self.historical_extreme));
        let _ = writeln!(s, "test_normal = {}", dates(&self.test_normal));
        let _ = writeln!(s, "test_extreme = {}", dates(&self.test_extreme));
        s
    }
}

/// Holds out `round(test_fraction · n)` records of each regime, then fits the
/// standardization on what remains.
pub fn split_and_standardize(
    records: &DayRecords,
    labels: &BTreeMap<NaiveDate, Regime>,
    test_fraction: f64,
    seed: u64,
) -> Result<DataSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::contract(format!("test fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut strata: [Vec<&DayRecord>; 2] = [Vec::new(), Vec::new()];
    for r in &records.records {
        let label = labels
            .get(&r.date)
            .ok_or_else(|| Error::contract(format!("no label for {}", r.date)))?;
        strata[usize::from(label.is_extreme())].push(r);
    }
    let mut parts: Vec<(Vec<&DayRecord>, Vec<&DayRecord>)> = Vec::new();
    for (k, (stratum, name)) in strata.iter_mut().zip(["normal", "extreme"]).enumerate() {
        if stratum.is_empty() {
            return Err(Error::contract(format!("the {name} stratum is empty")));
        }
        let mut rng = fork_rng(seed, k as u64);
        stratum.shuffle(&mut rng);
        let n_test = (test_fraction * stratum.len() as f64).round() as usize;
        let mut test = stratum[..n_test].to_vec();
        let mut hist = stratum[n_test..].to_vec();
        test.sort_by_key(|r| r.date);
        hist.sort_by_key(|r| r.date);
        parts.push((hist, test));
    }
    let historical: Vec<&DayRecord> = parts[0].0.iter().chain(&parts[1].0).copied().collect();
    let stats = Standardization::fit(&historical)?;
    let std = |v: &[&DayRecord]| v.iter().map(|r| stats.apply(r)).collect::<Vec<_>>();
    Ok(DataSplit {
        feature_names: records.feature_names.clone(),
        historical_normal: std(&parts[0].0),
        historical_extreme: std(&parts[1].0),
        test_normal: std(&parts[0].1),
        test_extreme: std(&parts[1].1),
        stats,
        test_fraction,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_hours(start: NaiveDateTime, hours: usize, skip: &[usize]) -> String {
        let mut s = String::from("timestamp,load,temperature\n");
        for h in (0..hours).filter(|h| !skip.contains(h)) {
            let t = start + Duration::hours(h as i64);
            let _ = writeln!(s, "{},{},{}", t.format("%Y-%m-%dT%H:%M:%S"), 1000.0 + h as f64, 10.0 + (h % 24) as f64 * 0.5);
        }
        s
    }

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2022, 1, 3).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn clean_file_has_no_gaps() {
        let s = ingest_reader(csv_hours(start(), 48, &[]).as_bytes(), &Schema::default()).unwrap();
        assert_eq!(s.len(), 48);
        assert!(s.gaps.is_empty());
    }

    #[test]
    fn missing_hour_is_recorded() {
        let s = ingest_reader(csv_hours(start(), 48, &[30]).as_bytes(), &Schema::default()).unwrap();
        assert_eq!(s.gaps, vec![start() + Duration::hours(30)]);
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let mut text = csv_hours(start(), 5, &[]);
        text = text.replace("1002,", "abc,");
        match ingest_reader(text.as_bytes(), &Schema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_order_rows_are_rejected() {
        let text = "timestamp,load,temperature\n2022-01-01T01:00:00,1,1\n2022-01-01T00:00:00,1,1\n";
        assert!(matches!(ingest_reader(text.as_bytes(), &Schema::default()), Err(Error::Data(_))));
        let dup = "timestamp,load,temperature\n2022-01-01T01:00:00,1,1\n2022-01-01T01:00:00,1,1\n";
        assert!(ingest_reader(dup.as_bytes(), &Schema::default()).is_err());
        let missing = "time,load,temperature\n";
        assert!(ingest_reader(missing.as_bytes(), &Schema::default()).is_err());
    }

    #[test]
    fn two_clean_days_make_one_record() {
        let s = ingest_reader(csv_hours(start(), 48, &[]).as_bytes(), &Schema::default()).unwrap();
        let r = build_day_records(&s, &FeatureConfig::default()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].x.len(), 176);
        assert_eq!(r.feature_names.len(), 176);
        assert_eq!(r.records[0].y.len(), 24);
        assert_eq!(r.records[0].y[0], 1024.0);
    }

    #[test]
    fn gap_days_are_dropped() {
        let s = ingest_reader(csv_hours(start(), 72, &[30]).as_bytes(), &Schema::default()).unwrap();
        let r = build_day_records(&s, &FeatureConfig::default()).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.dropped.len(), 2);
    }

    #[test]
    fn reference_temperature_zeroes_hinges() {
        assert_eq!(TempTerm::Heating.eval(18.0, 18.0), 0.0);
        assert_eq!(TempTerm::Cooling.eval(18.0, 18.0), 0.0);
        assert_eq!(TempTerm::Cooling.eval(20.0, 18.0), 2.0);
        assert_eq!(TempTerm::Heating.eval(15.0, 18.0), 3.0);
    }

    #[test]
    fn holidays_parse() {
        let h = parse_holidays("# comment\n2022-12-25\n\n2023-01-01\n").unwrap();
        assert_eq!(h.len(), 2);
        assert!(parse_holidays("2022-13-01").is_err());
    }

    #[test]
    fn seasons() {
        let d = |m| NaiveDate::from_ymd_opt(2022, m, 1).unwrap();
        assert_eq!([d(1), d(4), d(7), d(10), d(12)].map(season), [0, 1, 2, 3, 0]);
    }
}
