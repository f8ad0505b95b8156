//! Few-shot regression suite built on phase-transition tasks.
//!
//! Every training episode is a fresh task. Outputs are standardized with one
//! suite-wide affine map estimated from a fixed reference sample, so metrics
//! on every task share a scale. Inputs stay raw.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{MetricValues, DECILES};
use crate::models::{ConditionalPredictor, ContextSet, GaussianPrediction, TargetBatch};
use crate::numeric::Matrix;
use crate::synth::{sample_points, sample_task, PhaseTransitionTask, TaskSample, ToyConfig};
use crate::training::{fork_rng, Episode, EpisodeSource, TrainConfig};

const REFERENCE_SEED: u64 = 0x5EED_70E5;
const REFERENCE_TASKS: usize = 2000;
const REFERENCE_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ToySuite {
    pub config: ToyConfig,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl ToySuite {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = fork_rng(REFERENCE_SEED, 0);
        let mut ys = Vec::with_capacity(REFERENCE_TASKS * REFERENCE_POINTS);
        for _ in 0..REFERENCE_TASKS {
            let task = sample_task(&mut rng, &config)?;
            ys.extend(sample_points(&task, REFERENCE_POINTS, &mut rng)?.ys);
        }
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let y_scale = (ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>() / n).sqrt();
        Ok(Self { config, y_mean, y_scale })
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    fn matrices(&self, s: &TaskSample, range: std::ops::Range<usize>) -> Result<(Matrix, Matrix)> {
        let x = Matrix::from_vec(range.len(), 1, s.xs[range.clone()].to_vec())?;
        let y = Matrix::from_vec(range.len(), 1, s.ys[range].iter().map(|&y| self.standardize(y)).collect())?;
        Ok((x, y))
    }

    /// `n_c` context points and `n_t` disjoint targets from one task.
    pub fn episode(&self, task: &PhaseTransitionTask, n_c: usize, n_t: usize, rng: &mut ChaCha8Rng) -> Result<Episode> {
        let s = sample_points(task, n_c + n_t, rng)?;
        let (cx, cy) = self.matrices(&s, 0..n_c)?;
        let (tx, ty) = self.matrices(&s, n_c..n_c + n_t)?;
        Ok(Episode {
            context: ContextSet::new(cx, cy)?,
            targets: TargetBatch::new(tx, Some(ty))?,
            context_ids: (0..n_c as u64).collect(),
            target_ids: (n_c as u64..(n_c + n_t) as u64).collect(),
        })
    }
}

impl EpisodeSource for ToySuite {
    fn x_dim(&self) -> usize {
        1
    }

    fn y_dim(&self) -> usize {
        1
    }

    fn sample(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
        use rand::Rng;
        let task = sample_task(rng, &self.config)?;
        let n_c = rng.random_range(cfg.context_size.lo..=cfg.context_size.hi);
        let n_t = rng.random_range(cfg.target_size.lo..=cfg.target_size.hi);
        self.episode(&task, n_c, n_t, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEvalConfig {
    pub tasks: usize,
    pub context_sizes: Vec<usize>,
    pub targets: usize,
    pub seed: u64,
}

impl Default for ToyEvalConfig {
    fn default() -> Self {
        Self {
            tasks: 100,
            context_sizes: vec![5, 10, 15],
            targets: 50,
            seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    /// Metrics pooled over every task and context size.
    pub overall: MetricValues,
    pub by_context_size: Vec<(usize, MetricValues)>,
}

/// Held-out tasks, identical for every predictor given the same seed.
pub fn test_tasks(suite: &ToySuite, cfg: &ToyEvalConfig) -> Result<Vec<PhaseTransitionTask>> {
    let mut rng = fork_rng(cfg.seed, 0);
    (0..cfg.tasks).map(|_| sample_task(&mut rng, &suite.config)).collect()
}

pub fn evaluate_toy(predictor: &dyn ConditionalPredictor, suite: &ToySuite, cfg: &ToyEvalConfig) -> Result<ToyReport> {
    if cfg.tasks == 0 || cfg.targets == 0 || cfg.context_sizes.is_empty() {
        return Err(Error::contract("toy evaluation needs tasks, targets and context sizes"));
    }
    let tasks = test_tasks(suite, cfg)?;
    let mut all_mean = Vec::new();
    let mut all_var = Vec::new();
    let mut all_y = Vec::new();
    let mut by_context_size = Vec::new();
    for (k, &n_c) in cfg.context_sizes.iter().enumerate() {
        let (mut mean, mut var, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for (i, task) in tasks.iter().enumerate() {
            let mut rng = fork_rng(cfg.seed, 1 + (k * cfg.tasks + i) as u64);
            let ep = suite.episode(task, n_c, cfg.targets, &mut rng)?;
            let p = predictor.predict(&ep.context, &ep.targets)?;
            mean.extend_from_slice(p.mean().as_slice());
            var.extend_from_slice(p.var().as_slice());
            ys.extend_from_slice(ep.targets.outputs().expect("toy targets").as_slice());
        }
        by_context_size.push((n_c, values(&mean, &var, &ys)?));
        all_mean.extend(mean);
        all_var.extend(var);
        all_y.extend(ys);
    }
    Ok(ToyReport {
        overall: values(&all_mean, &all_var, &all_y)?,
        by_context_size,
    })
}

fn values(mean: &[f64], var: &[f64], y: &[f64]) -> Result<MetricValues> {
    let n = y.len();
    let pred = GaussianPrediction::new(
        Matrix::from_vec(n, 1, mean.to_vec())?,
        Matrix::from_vec(n, 1, var.to_vec())?,
    )?;
    MetricValues::compute(&pred, &Matrix::from_vec(n, 1, y.to_vec())?, &DECILES)
}
