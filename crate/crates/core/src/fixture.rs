//! Synthetic hourly load and temperature with injected extreme days.
//!
//! Temperature follows an annual cycle, a diurnal cycle and an AR(1) daily
//! anomaly. Load responds to heating and cooling demand, the hour of day,
//! weekends and holidays. On each injected extreme day the temperature jumps
//! and the afternoon load gains a large bump.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::load::HourlySeries;
use crate::training::fork_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub extreme_days: usize,
    pub holidays: bool,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
        let end = NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date");
        Self {
            start,
            days: (end - start).num_days() as usize,
            extreme_days: 60,
            holidays: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub series: HourlySeries,
    pub extreme_dates: Vec<NaiveDate>,
}

/// Minimum spacing between injected days, so no window holds two of them.
const SPACING: usize = 16;

fn fixed_holidays(start: NaiveDate, end: NaiveDate) -> BTreeSet<NaiveDate> {
    let mut out = BTreeSet::new();
    for y in start.year()..=end.year() {
        for (m, d) in [(1, 1), (7, 4), (11, 11), (12, 25)] {
            let date = NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
            if date >= start && date < end {
                out.insert(date);
            }
        }
    }
    out
}

fn profile(h: f64) -> f64 {
    0.6 * (-(h - 8.0).powi(2) / 8.0).exp() + (-(h - 18.0).powi(2) / 10.0).exp() + if (7.0..22.0).contains(&h) { 0.3 } else { 0.0 }
}

pub fn generate_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    let margin = SPACING / 2;
    let slots = cfg.days.saturating_sub(2 * margin) / SPACING;
    if cfg.extreme_days > slots {
        return Err(Error::contract(format!(
            "{} days leave room for at most {slots} injected extreme days",
            cfg.days
        )));
    }
    if cfg.days < 2 {
        return Err(Error::contract("a fixture needs at least two days"));
    }
    let mut rng = fork_rng(cfg.seed, 0);
    let end = cfg.start + Duration::days(cfg.days as i64);
    let holidays = if cfg.holidays {
        fixed_holidays(cfg.start, end)
    } else {
        BTreeSet::new()
    };

    // one injected day per chosen slot, at a random offset inside it
    let mut extreme_idx: Vec<usize> = index::sample(&mut rng, slots.max(1), cfg.extreme_days.min(slots))
        .into_iter()
        .map(|s| margin + s * SPACING + rng.random_range(4..SPACING - 4))
        .collect();
    extreme_idx.sort_unstable();
    let extreme_dates: Vec<NaiveDate> = extreme_idx
        .iter()
        .map(|&i| cfg.start + Duration::days(i as i64))
        .collect();

    let anomaly_noise = Normal::new(0.0, 2.0).expect("valid normal");
    let hour_noise = Normal::new(0.0, 0.5).expect("valid normal");
    let load_noise = Normal::new(0.0, 15.0).expect("valid normal");
    let mut series = HourlySeries {
        timestamps: Vec::with_capacity(cfg.days * 24),
        load: Vec::with_capacity(cfg.days * 24),
        temperature: Vec::with_capacity(cfg.days * 24),
        gaps: Vec::new(),
        holidays: holidays.clone(),
    };
    let mut anomaly = 0.0;
    let mut next_extreme = extreme_idx.iter().peekable();
    for day in 0..cfg.days {
        let date = cfg.start + Duration::days(day as i64);
        anomaly = 0.7 * anomaly + anomaly_noise.sample(&mut rng);
        let doy = f64::from(date.ordinal());
        let seasonal = 12.0 - 11.0 * (2.0 * PI * (doy - 20.0) / 365.25).cos();
        let extreme = next_extreme.next_if(|&&i| i == day).is_some();
        let (jump, bump, peak) = if extreme {
            let sign = match crate::load::season(date) {
                0 => -1.0,
                2 => 1.0,
                _ => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            (sign * rng.random_range(12.0..16.0), rng.random_range(450.0..650.0), rng.random_range(12.0..17.0))
        } else {
            (0.0, 0.0, 0.0)
        };
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let holiday = holidays.contains(&date);
        for h in 0..24 {
            let hf = h as f64;
            let t = seasonal + anomaly + jump + 4.0 * (2.0 * PI * (hf - 9.0) / 24.0).sin() + hour_noise.sample(&mut rng);
            let mut load = 900.0 + 18.0 * (16.0 - t).max(0.0) + 30.0 * (t - 20.0).max(0.0) + 250.0 * profile(hf);
            if weekend {
                load -= 120.0;
            }
            if holiday {
                load -= 150.0;
            }
            load += bump * (-(hf - peak).powi(2) / 6.0).exp();
            load += load_noise.sample(&mut rng);
            series.timestamps.push(date.and_hms_opt(h, 0, 0).expect("valid hour"));
            series.load.push(load.max(0.0));
            series.temperature.push(t);
        }
    }
    Ok(Fixture { series, extreme_dates })
}

impl Fixture {
    pub fn to_csv(&self) -> String {
        let s = &self.series;
        let mut out = String::with_capacity(s.len() * 40);
        out.push_str("timestamp,load,temperature\n");
        for ((t, l), k) in s.timestamps.iter().zip(&s.load).zip(&s.temperature) {
            let _ = writeln!(out, "{},{l:.3},{k:.3}", format_timestamp(t));
        }
        out
    }

    pub fn holidays_text(&self) -> String {
        self.series.holidays.iter().map(|d| format!("{d}\n")).collect()
    }

    pub fn extremes_text(&self) -> String {
        self.extreme_dates.iter().map(|d| format!("{d}\n")).collect()
    }
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}
