//! One-dimensional phase-transition tasks.
//!
//! Each task is linear up to the threshold `x_c` and sinusoidal beyond it, with
//! a separate noise level per regime. The sinusoid is offset so both pieces
//! meet at `x_c`:
//!
//! ```text
//! μ₁(x) = a·x + b
//! μ₂(x) = μ₁(x_c) + A·sin(2πf·(x − x_c) + φ₀) − A·sin(φ₀)
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::parse_key_values;
use crate::Regime;

/// Closed interval a coefficient is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::contract(format!(
                "range `{name}` [{}, {}] is empty or not finite",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Coefficient ranges for [`sample_task`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub threshold: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub slope: Range,
    pub intercept: Range,
    pub amplitude: Range,
    pub frequency: Range,
    pub phase: Range,
    pub noise_var_normal: Range,
    pub noise_var_extreme: Range,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            x_lo: -2.0,
            x_hi: 3.0,
            slope: Range::new(-2.0, 2.0),
            intercept: Range::new(-1.0, 1.0),
            amplitude: Range::new(0.5, 2.0),
            frequency: Range::new(0.5, 2.0),
            phase: Range::new(0.0, 2.0 * PI),
            noise_var_normal: Range::new(0.01, 0.09),
            noise_var_extreme: Range::new(0.04, 0.25),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo < self.threshold && self.threshold < self.x_hi) {
            return Err(Error::contract(format!(
                "need x_lo < threshold < x_hi, got {} < {} < {}",
                self.x_lo, self.threshold, self.x_hi
            )));
        }
        for (name, r) in self.ranges() {
            r.check(name)?;
        }
        if self.noise_var_normal.lo <= 0.0 || self.noise_var_extreme.lo <= 0.0 {
            return Err(Error::contract("noise variance ranges must be strictly positive"));
        }
        if self.phase.hi > 2.0 * PI {
            return Err(Error::contract("phase range must lie within [0, 2π]"));
        }
        Ok(())
    }

    pub fn ranges(&self) -> [(&'static str, Range); 7] {
        [
            ("slope", self.slope),
            ("intercept", self.intercept),
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("phase", self.phase),
            ("noise_var_normal", self.noise_var_normal),
            ("noise_var_extreme", self.noise_var_extreme),
        ]
    }
}

/// One sampled piecewise generative function.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTransitionTask {
    pub threshold: f64,
    pub slope: f64,
    pub intercept: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub noise_var_normal: f64,
    pub noise_var_extreme: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl PhaseTransitionTask {
    pub fn regime(&self, x: f64) -> Regime {
        if x > self.threshold {
            Regime::Extreme
        } else {
            Regime::Normal
        }
    }

    pub fn linear_mean(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn sinusoid_mean(&self, x: f64) -> f64 {
        let anchor = self.linear_mean(self.threshold);
        let wave = (2.0 * PI * self.frequency * (x - self.threshold) + self.phase).sin();
        anchor + self.amplitude * (wave - self.phase.sin())
    }

    pub fn mean(&self, x: f64) -> f64 {
        match self.regime(x) {
            Regime::Normal => self.linear_mean(x),
            Regime::Extreme => self.sinusoid_mean(x),
        }
    }

    pub fn noise_var(&self, x: f64) -> f64 {
        match self.regime(x) {
            Regime::Normal => self.noise_var_normal,
            Regime::Extreme => self.noise_var_extreme,
        }
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("threshold", self.threshold),
            ("slope", self.slope),
            ("intercept", self.intercept),
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("phase", self.phase),
            ("noise_var_normal", self.noise_var_normal),
            ("noise_var_extreme", self.noise_var_extreme),
            ("x_lo", self.x_lo),
            ("x_hi", self.x_hi),
        ]
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::data(format!("task file is missing `{k}`")))?
                .parse()
                .map_err(|_| Error::data(format!("task field `{k}` is not a number")))
        };
        Ok(Self {
            threshold: get("threshold")?,
            slope: get("slope")?,
            intercept: get("intercept")?,
            amplitude: get("amplitude")?,
            frequency: get("frequency")?,
            phase: get("phase")?,
            noise_var_normal: get("noise_var_normal")?,
            noise_var_extreme: get("noise_var_extreme")?,
            x_lo: get("x_lo")?,
            x_hi: get("x_hi")?,
        })
    }
}

pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, cfg: &ToyConfig) -> Result<PhaseTransitionTask> {
    cfg.validate()?;
    Ok(PhaseTransitionTask {
        threshold: cfg.threshold,
        slope: cfg.slope.draw(rng),
        intercept: cfg.intercept.draw(rng),
        amplitude: cfg.amplitude.draw(rng),
        frequency: cfg.frequency.draw(rng),
        phase: cfg.phase.draw(rng),
        noise_var_normal: cfg.noise_var_normal.draw(rng),
        noise_var_extreme: cfg.noise_var_extreme.draw(rng),
        x_lo: cfg.x_lo,
        x_hi: cfg.x_hi,
    })
}

/// Points drawn from one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub labels: Vec<Regime>,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Three tab-separated columns `x`, `y`, `label` with a header row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("x\ty\tlabel\n");
        for ((x, y), l) in self.xs.iter().zip(&self.ys).zip(&self.labels) {
            let _ = writeln!(s, "{x}\t{y}\t{}", l.name());
        }
        s
    }
}

/// `x ~ U[x_lo, x_hi]`, `y = mean(x) + N(0, noise_var(x))`.
pub fn sample_points<R: Rng + ?Sized>(task: &PhaseTransitionTask, n: usize, rng: &mut R) -> Result<TaskSample> {
    if n == 0 {
        return Err(Error::contract("need at least one point"));
    }
    if !(task.x_lo <= task.x_hi) {
        return Err(Error::contract("empty input interval"));
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = if task.x_lo == task.x_hi {
            task.x_lo
        } else {
            rng.random_range(task.x_lo..task.x_hi)
        };
        let z: f64 = StandardNormal.sample(rng);
        xs.push(x);
        ys.push(task.mean(x) + task.noise_var(x).sqrt() * z);
        labels.push(task.regime(x));
    }
    Ok(TaskSample { xs, ys, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_tasks_are_continuous_at_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ToyConfig::default();
        for _ in 0..1000 {
            let t = sample_task(&mut rng, &cfg).unwrap();
            assert_eq!(t.sinusoid_mean(t.threshold) - t.linear_mean(t.threshold), 0.0);
        }
    }

    #[test]
    fn coefficients_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = ToyConfig::default();
        for _ in 0..1000 {
            let t = sample_task(&mut rng, &cfg).unwrap();
            let vals = [t.slope, t.intercept, t.amplitude, t.frequency, t.phase, t.noise_var_normal, t.noise_var_extreme];
            for ((name, r), v) in cfg.ranges().iter().zip(vals) {
                assert!(r.contains(v), "{name} = {v}");
            }
            assert_eq!(t.threshold, 1.0);
        }
    }

    #[test]
    fn zero_amplitude_makes_extreme_regime_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        t.amplitude = 0.0;
        let anchor = t.linear_mean(t.threshold);
        for x in [1.1, 1.7, 2.9] {
            assert_eq!(t.mean(x), anchor);
        }
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ToyConfig { slope: Range::new(1.0, -1.0), ..ToyConfig::default() };
        assert!(sample_task(&mut rng, &cfg).is_err());
        let cfg = ToyConfig { threshold: 5.0, ..ToyConfig::default() };
        assert!(sample_task(&mut rng, &cfg).is_err());
    }

    #[test]
    fn noiseless_points_lie_on_the_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        t.noise_var_normal = 0.0;
        t.noise_var_extreme = 0.0;
        let s = sample_points(&t, 200, &mut rng).unwrap();
        for (x, y) in s.xs.iter().zip(&s.ys) {
            assert_eq!(*y, t.mean(*x));
        }
    }

    #[test]
    fn shrunken_interval_is_all_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        t.x_hi = 0.5;
        let s = sample_points(&t, 300, &mut rng).unwrap();
        assert!(s.labels.iter().all(|l| *l == Regime::Normal));
    }

    #[test]
    fn labels_follow_the_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        let s = sample_points(&t, 500, &mut rng).unwrap();
        for (x, l) in s.xs.iter().zip(&s.labels) {
            assert_eq!(*l == Regime::Extreme, *x > t.threshold);
        }
        assert!(sample_points(&t, 0, &mut rng).is_err());
    }

    #[test]
    fn normal_regime_residual_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        t.noise_var_normal = 0.04;
        let s = sample_points(&t, 100_000, &mut rng).unwrap();
        let resid: Vec<f64> = s
            .xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, _)| **x <= t.threshold)
            .map(|(x, y)| y - t.mean(*x))
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.04).abs() < 0.05 * 0.04, "{var}");
        assert!(mean.abs() < 4.0 * 0.2 / n.sqrt());
    }

    #[test]
    fn task_file_replays_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = sample_task(&mut rng, &ToyConfig::default()).unwrap();
        assert_eq!(PhaseTransitionTask::from_key_values(&t.to_key_values()).unwrap(), t);
    }
}
