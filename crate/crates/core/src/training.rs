//! Episode sampling, the training loop, and leakage-safe evaluation.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{MetricValues, MetricsReport, DECILES};
use crate::models::graph::{loss_and_gradients, EpisodeData};
use crate::models::{ConditionalPredictor, ContextSet, GaussianPrediction, ModelBundle, ModelConfig, NeuralKind, TargetBatch};
use crate::numeric::{AdamConfig, AdamState, Matrix};

/// Labelled points with stable ids, used both as training pool and as
/// evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    ids: Vec<u64>,
    inputs: Matrix,
    outputs: Matrix,
}

impl Pool {
    pub fn new(ids: Vec<u64>, inputs: Matrix, outputs: Matrix) -> Result<Self> {
        if ids.len() != inputs.rows() || ids.len() != outputs.rows() {
            return Err(Error::contract(format!(
                "{} ids for {} inputs and {} outputs",
                ids.len(),
                inputs.rows(),
                outputs.rows()
            )));
        }
        let unique: HashSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::contract("pool ids must be unique"));
        }
        Ok(Self { ids, inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn x_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn y_dim(&self) -> usize {
        self.outputs.cols()
    }

    fn gather(&self, rows: &[usize]) -> (Vec<u64>, Matrix, Matrix) {
        let mut x = Matrix::zeros(rows.len(), self.x_dim());
        let mut y = Matrix::zeros(rows.len(), self.y_dim());
        for (k, &r) in rows.iter().enumerate() {
            x.row_mut(k).copy_from_slice(self.inputs.row(r));
            y.row_mut(k).copy_from_slice(self.outputs.row(r));
        }
        (rows.iter().map(|&r| self.ids[r]).collect(), x, y)
    }

    pub fn context(&self, rows: &[usize]) -> Result<(Vec<u64>, ContextSet)> {
        let (ids, x, y) = self.gather(rows);
        Ok((ids, ContextSet::new(x, y)?))
    }
}

/// A context set plus targets with known outputs.
#[derive(Debug, Clone)]
pub struct Episode {
    pub context: ContextSet,
    pub targets: TargetBatch,
    pub context_ids: Vec<u64>,
    pub target_ids: Vec<u64>,
}

impl EpisodeData for Episode {
    fn context(&self) -> &ContextSet {
        &self.context
    }

    fn targets(&self) -> &TargetBatch {
        &self.targets
    }
}

impl Episode {
    fn summary(&self) -> String {
        format!(
            "n_c = {}, n_t = {}, context ids {:?}, target ids {:?}",
            self.context.len(),
            self.targets.len(),
            self.context_ids,
            self.target_ids
        )
    }
}

/// Inclusive size interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeRange {
    pub lo: usize,
    pub hi: usize,
}

impl SizeRange {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(n: usize) -> Self {
        Self { lo: n, hi: n }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

impl std::fmt::Display for SizeRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for SizeRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::contract(format!("bad size range `{s}` (expected `lo..hi` or `n`)")))
        };
        match s.split_once("..") {
            Some((a, b)) => Ok(Self::new(parse(a)?, parse(b)?)),
            None => Ok(Self::fixed(parse(s)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub context_size: SizeRange,
    pub target_size: SizeRange,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
    pub log_stride: usize,
    /// Moving-average window of the loss curve, in logged steps.
    pub window: usize,
    /// Episodes averaged per gradient step.
    pub batch_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            context_size: SizeRange::new(5, 20),
            target_size: SizeRange::new(10, 20),
            learning_rate: 1e-3,
            temperature: 1.0,
            seed: 0,
            log_stride: 1,
            window: 100,
            batch_episodes: 1,
        }
    }
}

impl TrainConfig {
    /// Checks the invariants; a zero learning rate is allowed and leaves the
    /// parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(m));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        for (name, r) in [("context_size", self.context_size), ("target_size", self.target_size)] {
            if r.lo == 0 || r.lo > r.hi {
                return fail(format!("{name} range {r} must be nonempty with lower bound >= 1"));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.log_stride == 0 || self.window == 0 || self.batch_episodes == 0 {
            return fail("log_stride, window and batch_episodes must be positive".into());
        }
        Ok(())
    }
}

/// Draws a context set and a disjoint target set without replacement.
pub fn sample_episode<R: Rng + ?Sized>(pool: &Pool, cfg: &TrainConfig, rng: &mut R) -> Result<Episode> {
    let need = cfg.context_size.hi + cfg.target_size.hi;
    if pool.len() < need {
        return Err(Error::contract(format!(
            "pool of {} points is smaller than the largest episode ({need})",
            pool.len()
        )));
    }
    let n_c = cfg.context_size.draw(rng);
    let n_t = cfg.target_size.draw(rng);
    let picked = index::sample(rng, pool.len(), n_c + n_t).into_vec();
    let (context_ids, cx, cy) = pool.gather(&picked[..n_c]);
    let (target_ids, tx, ty) = pool.gather(&picked[n_c..]);
    Ok(Episode {
        context: ContextSet::new(cx, cy)?,
        targets: TargetBatch::new(tx, Some(ty))?,
        context_ids,
        target_ids,
    })
}

/// Something that yields training episodes.
pub trait EpisodeSource {
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
    fn sample(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Episode>;
}

impl EpisodeSource for Pool {
    fn x_dim(&self) -> usize {
        Pool::x_dim(self)
    }

    fn y_dim(&self) -> usize {
        Pool::y_dim(self)
    }

    fn sample(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
        sample_episode(self, cfg, rng)
    }
}

/// Raw and moving-average training NLL.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub window: usize,
    pub iterations: Vec<usize>,
    pub raw: Vec<f64>,
    pub moving_average: Vec<f64>,
}

impl LossCurve {
    pub fn from_raw(window: usize, iterations: Vec<usize>, raw: Vec<f64>) -> Result<Self> {
        if window == 0 || iterations.len() != raw.len() {
            return Err(Error::contract("bad loss curve"));
        }
        let moving_average = (0..raw.len())
            .map(|k| {
                let start = (k + 1).saturating_sub(window);
                let w = &raw[start..=k];
                w.iter().sum::<f64>() / w.len() as f64
            })
            .collect();
        Ok(Self {
            window,
            iterations,
            raw,
            moving_average,
        })
    }

    /// Moving average at the last logged iteration not after `iteration`.
    pub fn average_at(&self, iteration: usize) -> Option<f64> {
        let k = self.iterations.partition_point(|&i| i <= iteration);
        (k > 0).then(|| self.moving_average[k - 1])
    }

    /// Tab-separated `iteration  ma_nll` rows, preceded by a header row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("iteration\tma_nll\n");
        for (i, m) in self.iterations.iter().zip(&self.moving_average) {
            let _ = writeln!(s, "{i}\t{m}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: ModelBundle,
    pub bundle: ModelBundle,
    pub curve: LossCurve,
    /// Context ids of every episode, in training order.
    pub context_log: Vec<Vec<u64>>,
}

/// Seeded stream `stream` of the generator for `seed`.
pub fn fork_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Joint Adam training of every network in the bundle on the episode NLL.
pub fn train<S: EpisodeSource + ?Sized>(
    kind: NeuralKind,
    source: &S,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ModelConfig {
        temperature: cfg.temperature,
        ..model.clone()
    };
    let mut init_rng = fork_rng(cfg.seed, 0);
    let initial = ModelBundle::init(source.x_dim(), source.y_dim(), &model, &mut init_rng)?;
    let mut bundle = initial.clone();
    let lens: Vec<usize> = bundle.buffers().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &lens,
    );
    let mut rng = fork_rng(cfg.seed, 1);
    let mut iterations = Vec::new();
    let mut raw = Vec::new();
    let mut context_log = Vec::with_capacity(cfg.iterations * cfg.batch_episodes);

    for iter in 1..=cfg.iterations {
        let batch = (0..cfg.batch_episodes)
            .map(|_| source.sample(cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = loss_and_gradients(kind, &bundle, &batch)?;
        let bad_grad = grads.iter().flatten().any(|g| !g.is_finite());
        if !loss.is_finite() || bad_grad {
            let what = if loss.is_finite() { "gradient" } else { "loss" };
            let summary: Vec<String> = batch.iter().map(Episode::summary).collect();
            return Err(Error::numerical(format!(
                "non-finite {what} at iteration {iter} (loss {loss}); episode: {}",
                summary.join("; ")
            )));
        }
        context_log.extend(batch.into_iter().map(|e| e.context_ids));
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam.step(&mut bundle.buffers_mut(), &grad_refs)?;
        if iter % cfg.log_stride == 0 || iter == cfg.iterations {
            iterations.push(iter);
            raw.push(loss);
        }
    }
    let curve = LossCurve::from_raw(cfg.window, iterations, raw)?;
    Ok(TrainOutcome {
        initial,
        bundle,
        curve,
        context_log,
    })
}

/// Confirms no logged context id belongs to the evaluation split.
pub fn audit_contexts(context_log: &[Vec<u64>], eval_ids: &[u64]) -> Result<()> {
    let held_out: HashSet<u64> = eval_ids.iter().copied().collect();
    for (k, ids) in context_log.iter().enumerate() {
        if let Some(id) = ids.iter().find(|id| held_out.contains(id)) {
            return Err(Error::contract(format!(
                "leakage: evaluation point {id} appears in context set {k}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub context_size: usize,
    pub resamples: usize,
    pub seed: u64,
    pub workers: usize,
    pub levels: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            context_size: 16,
            resamples: 10,
            seed: 0,
            workers: 1,
            levels: DECILES.to_vec(),
        }
    }
}

/// Report plus the predictions behind it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// One prediction per resample, rows aligned with the evaluation set.
    pub predictions: Vec<GaussianPrediction>,
    pub per_resample: Vec<MetricValues>,
}

/// Predicts every evaluation target from contexts drawn only from
/// `context_pool`, repeated over `cfg.resamples` context draws.
pub fn evaluate(
    predictor: &dyn ConditionalPredictor,
    context_pool: &Pool,
    eval_set: &Pool,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if eval_set.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    if cfg.resamples == 0 || cfg.context_size == 0 {
        return Err(Error::contract("resamples and context size must be positive"));
    }
    if context_pool.x_dim() != eval_set.x_dim() || context_pool.y_dim() != eval_set.y_dim() {
        return Err(Error::contract("context pool and evaluation set dimensions differ"));
    }
    audit_contexts(&[context_pool.ids().to_vec()], eval_set.ids())?;
    if context_pool.len() < cfg.context_size {
        return Err(Error::contract(format!(
            "context pool has {} points, fewer than the context size {}",
            context_pool.len(),
            cfg.context_size
        )));
    }
    let n = eval_set.len();
    let d_y = eval_set.y_dim();
    let jobs = cfg.resamples * n;
    let workers = cfg.workers.clamp(1, jobs);

    // job j = r·n + t; each job owns stream j of the evaluation seed
    let run = |job: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let t = job % n;
        let mut rng = fork_rng(cfg.seed, job as u64);
        let rows = index::sample(&mut rng, context_pool.len(), cfg.context_size).into_vec();
        let (_, ctx) = context_pool.context(&rows)?;
        let x = Matrix::from_vec(1, eval_set.x_dim(), eval_set.inputs().row(t).to_vec())?;
        let p = predictor.predict(&ctx, &TargetBatch::inputs_only(x)?)?;
        Ok((p.mean().row(0).to_vec(), p.var().row(0).to_vec()))
    };
    let mut results: Vec<Option<Result<(Vec<f64>, Vec<f64>)>>> = (0..jobs).map(|_| None).collect();
    if workers == 1 {
        for (job, slot) in results.iter_mut().enumerate() {
            *slot = Some(run(job));
        }
    } else {
        let chunk = jobs.div_ceil(workers);
        std::thread::scope(|s| {
            for (w, slots) in results.chunks_mut(chunk).enumerate() {
                let run = &run;
                s.spawn(move || {
                    for (k, slot) in slots.iter_mut().enumerate() {
                        *slot = Some(run(w * chunk + k));
                    }
                });
            }
        });
    }

    let mut predictions = Vec::with_capacity(cfg.resamples);
    let mut per_resample = Vec::with_capacity(cfg.resamples);
    let mut it = results.into_iter();
    for _ in 0..cfg.resamples {
        let mut mean = Matrix::zeros(n, d_y);
        let mut var = Matrix::zeros(n, d_y);
        for t in 0..n {
            let (m, v) = it.next().flatten().expect("every job ran")?;
            mean.row_mut(t).copy_from_slice(&m);
            var.row_mut(t).copy_from_slice(&v);
        }
        let pred = GaussianPrediction::new(mean, var)?;
        per_resample.push(MetricValues::compute(&pred, eval_set.outputs(), &cfg.levels)?);
        predictions.push(pred);
    }
    Ok(Evaluation {
        report: MetricsReport::from_resamples(&per_resample, n, d_y)?,
        predictions,
        per_resample,
    })
}
