use adacnp::metrics::{MetricValues, DECILES};
use adacnp::models::{
    ConditionalPredictor, ContextSet, GaussianPrediction, ModelConfig, NeuralKind, NeuralPredictor, TargetBatch,
};
use adacnp::numeric::{Activation, Matrix};
use adacnp::training::{
    audit_contexts, evaluate, fork_rng, sample_episode, train, EvalConfig, LossCurve, Pool, SizeRange, TrainConfig,
};
use rand::seq::index;

fn pool(ids: std::ops::Range<u64>, seed: u64) -> Pool {
    let n = ids.end - ids.start;
    let mut rng = fork_rng(seed, 0);
    let x: Vec<f64> = (0..n * 2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let y: Vec<f64> = x.chunks(2).map(|r| (2.0 * r[0]).sin() + 0.5 * r[1]).collect();
    Pool::new(
        ids.collect(),
        Matrix::from_vec(n as usize, 2, x).unwrap(),
        Matrix::from_vec(n as usize, 1, y).unwrap(),
    )
    .unwrap()
}

#[test]
fn episode_membership_is_uniform() {
    let p = pool(0..100, 1);
    let cfg = TrainConfig::default();
    let mut rng = fork_rng(77, 0);
    let draws = 10_000;
    let mut ctx = [0usize; 100];
    let mut tgt = [0usize; 100];
    for _ in 0..draws {
        let e = sample_episode(&p, &cfg, &mut rng).unwrap();
        assert!(e.context_ids.iter().all(|c| !e.target_ids.contains(c)));
        for &i in &e.context_ids {
            ctx[i as usize] += 1;
        }
        for &i in &e.target_ids {
            tgt[i as usize] += 1;
        }
    }
    // n_c ~ U{5..20}, n_t ~ U{10..20}
    for (counts, p_in) in [(ctx, 12.5 / 100.0), (tgt, 15.0 / 100.0)] {
        let se = (p_in * (1.0 - p_in) / draws as f64).sqrt();
        for (i, c) in counts.iter().enumerate() {
            let f = *c as f64 / draws as f64;
            assert!((f - p_in).abs() <= 3.0 * se, "point {i}: {f} vs {p_in} (se {se})");
        }
    }
}

struct Constant(f64);

impl ConditionalPredictor for Constant {
    fn predict(&self, _: &ContextSet, t: &TargetBatch) -> adacnp::Result<GaussianPrediction> {
        GaussianPrediction::new(Matrix::filled(t.len(), 1, self.0), Matrix::filled(t.len(), 1, 1.0))
    }
}

#[test]
fn constant_mean_predictor_scores_the_population_variance() {
    let ctx = pool(0..200, 2);
    let eval = pool(1000..1300, 3);
    let y = eval.outputs().as_slice();
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
    let out = evaluate(&Constant(m), &ctx, &eval, &EvalConfig::default()).unwrap();
    assert!((out.report.mse_percent.mean - 100.0 * var).abs() < 1e-9);
    assert!(out.report.mse_percent.spread < 1e-12);
    assert_eq!(out.report.mse_percent.count, 10);
}

#[test]
fn evaluation_on_the_context_pool_is_rejected() {
    let p = pool(0..200, 4);
    let err = evaluate(&Constant(0.0), &p, &p, &EvalConfig::default()).unwrap_err();
    assert!(err.to_string().contains("leakage"), "{err}");
    let overlapping = pool(150..250, 5);
    assert!(evaluate(&Constant(0.0), &p, &overlapping, &EvalConfig::default()).is_err());
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        representation_dim: 8,
        encoder_hidden: vec![8],
        decoder_hidden: vec![8],
        embedding_hidden: vec![6],
        scorer_hidden: vec![6],
        temperature: 1.0,
        activation: Activation::Relu,
    }
}

#[test]
fn evaluation_matches_a_scripted_single_pass() {
    let hist = pool(0..120, 6);
    let test = pool(500..530, 7);
    let cfg = TrainConfig { iterations: 50, ..TrainConfig::default() };
    let out = train(NeuralKind::AdaCnp, &hist, &tiny_model(), &cfg).unwrap();
    let predictor = NeuralPredictor { kind: NeuralKind::AdaCnp, bundle: out.bundle };
    let ecfg = EvalConfig { context_size: 8, resamples: 4, seed: 9, workers: 1, levels: DECILES.to_vec() };
    let got = evaluate(&predictor, &hist, &test, &ecfg).unwrap();

    let n = test.len();
    let mut per = Vec::new();
    for r in 0..ecfg.resamples {
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for t in 0..n {
            let mut rng = fork_rng(ecfg.seed, (r * n + t) as u64);
            let rows = index::sample(&mut rng, hist.len(), ecfg.context_size).into_vec();
            let xs: Vec<Vec<f64>> = rows.iter().map(|&i| hist.inputs().row(i).to_vec()).collect();
            let ys: Vec<Vec<f64>> = rows.iter().map(|&i| hist.outputs().row(i).to_vec()).collect();
            let ctx = ContextSet::from_rows(&xs, &ys).unwrap();
            let x = Matrix::from_vec(1, 2, test.inputs().row(t).to_vec()).unwrap();
            let p = predictor.predict(&ctx, &TargetBatch::inputs_only(x).unwrap()).unwrap();
            mean.push(p.mean()[(0, 0)]);
            var.push(p.var()[(0, 0)]);
        }
        // metrics written out from their definitions
        let y = test.outputs().as_slice();
        let mse = 100.0 * mean.iter().zip(y).map(|(m, v)| (m - v) * (m - v)).sum::<f64>() / n as f64;
        let nll = mean
            .iter()
            .zip(&var)
            .zip(y)
            .map(|((m, s2), v)| 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + (v - m) * (v - m) / (2.0 * s2))
            .sum::<f64>()
            / n as f64;
        let pred = GaussianPrediction::new(
            Matrix::from_vec(n, 1, mean.clone()).unwrap(),
            Matrix::from_vec(n, 1, var.clone()).unwrap(),
        )
        .unwrap();
        let reference = MetricValues::compute(&pred, test.outputs(), &DECILES).unwrap();
        assert!((got.per_resample[r].mse_percent - mse).abs() < 1e-9);
        assert!((got.per_resample[r].nll - nll).abs() < 1e-9);
        assert_eq!(got.per_resample[r].pinball, reference.pinball);
        per.push((mse, nll));
    }
    let m = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let sd = (per.iter().map(|p| (p.0 - m) * (p.0 - m)).sum::<f64>() / (per.len() - 1) as f64).sqrt();
    assert!((got.report.mse_percent.mean - m).abs() < 1e-9);
    assert!((got.report.mse_percent.spread - sd).abs() < 1e-9);

    let parallel = evaluate(&predictor, &hist, &test, &EvalConfig { workers: 3, ..ecfg.clone() }).unwrap();
    assert_eq!(parallel.report, got.report);
}

#[test]
fn training_never_sees_held_out_points_and_logs_a_true_moving_average() {
    let hist = pool(0..100, 8);
    let test = pool(100..140, 9);
    let cfg = TrainConfig {
        iterations: 120,
        context_size: SizeRange::new(3, 8),
        target_size: SizeRange::new(3, 8),
        window: 25,
        ..TrainConfig::default()
    };
    let out = train(NeuralKind::Cnp, &hist, &tiny_model(), &cfg).unwrap();
    assert_eq!(out.context_log.len(), 120);
    audit_contexts(&out.context_log, test.ids()).unwrap();
    assert!(audit_contexts(&out.context_log, &[out.context_log[17][0]]).is_err());

    for (k, ma) in out.curve.moving_average.iter().enumerate() {
        let lo = (k + 1).saturating_sub(25);
        let want = out.curve.raw[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64;
        assert_eq!(*ma, want);
    }
    let again = LossCurve::from_raw(25, out.curve.iterations.clone(), out.curve.raw.clone()).unwrap();
    assert_eq!(again, out.curve);

    let twice = train(NeuralKind::Cnp, &hist, &tiny_model(), &cfg).unwrap();
    assert_eq!(twice.bundle, out.bundle);
    assert_eq!(twice.curve, out.curve);
}
