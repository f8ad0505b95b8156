use adacnp::metrics::{mse_percent, nll_mean, pinball, DECILES};
use adacnp::models::GaussianPrediction;
use adacnp::numeric::Matrix;
use adacnp::training::fork_rng;
use proptest::prelude::*;
use rand::Rng;

fn col(v: &[f64]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
}

#[test]
fn nll_matches_the_density() {
    let mut rng = fork_rng(31, 0);
    for _ in 0..1000 {
        let mu: f64 = rng.random_range(-3.0..3.0);
        let var: f64 = rng.random_range(0.05..5.0);
        let y: f64 = rng.random_range(-3.0..3.0);
        let density = (-(y - mu) * (y - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let p = GaussianPrediction::new(col(&[mu]), col(&[var])).unwrap();
        let got = nll_mean(&p, &col(&[y])).unwrap();
        assert!((got + density.ln()).abs() < 1e-12, "{mu} {var} {y}");
    }
}

#[test]
fn median_pinball_with_no_spread_is_half_mae() {
    let mut rng = fork_rng(32, 0);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = GaussianPrediction::new(col(&mu), col(&vec![0.0; n])).unwrap();
        let mae = mu.iter().zip(&y).map(|(m, t)| (m - t).abs()).sum::<f64>() / n as f64;
        assert!((pinball(&p, &col(&y), &[0.5]).unwrap() - 0.5 * mae).abs() < 1e-12);
    }
}

#[test]
fn mse_percent_matches_elementwise_sum() {
    let mut rng = fork_rng(33, 0);
    let n = 500;
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut sse = 0.0;
    for i in 0..n {
        sse += (a[i] - b[i]) * (a[i] - b[i]);
    }
    assert!((mse_percent(&col(&a), &col(&b)).unwrap() - 100.0 * sse / n as f64).abs() < 1e-10);
    assert!(mse_percent(&col(&a), &col(&b[..10])).is_err());
}

#[test]
fn zero_predictor_on_standardized_data_scores_about_100() {
    let mut rng = fork_rng(34, 0);
    let raw: Vec<f64> = (0..20000).map(|_| rng.random_range(0.0..7.0)).collect();
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    let s = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / raw.len() as f64).sqrt();
    let z: Vec<f64> = raw.iter().map(|v| (v - m) / s).collect();
    let v = mse_percent(&col(&vec![0.0; z.len()]), &col(&z)).unwrap();
    assert!((v - 100.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn metrics_ignore_point_order(
        pts in prop::collection::vec((-3.0f64..3.0, 0.01f64..4.0, -3.0f64..3.0), 1..30),
        rot in 0usize..30,
    ) {
        let k = rot % pts.len();
        let mut rotated = pts.clone();
        rotated.rotate_left(k);
        let build = |p: &[(f64, f64, f64)]| {
            let mu: Vec<f64> = p.iter().map(|t| t.0).collect();
            let var: Vec<f64> = p.iter().map(|t| t.1).collect();
            let y: Vec<f64> = p.iter().map(|t| t.2).collect();
            (GaussianPrediction::new(col(&mu), col(&var)).unwrap(), col(&y))
        };
        let (p1, y1) = build(&pts);
        let (p2, y2) = build(&rotated);
        prop_assert!((nll_mean(&p1, &y1).unwrap() - nll_mean(&p2, &y2).unwrap()).abs() < 1e-12);
        prop_assert!((mse_percent(p1.mean(), &y1).unwrap() - mse_percent(p2.mean(), &y2).unwrap()).abs() < 1e-10);
        prop_assert!((pinball(&p1, &y1, &DECILES).unwrap() - pinball(&p2, &y2, &DECILES).unwrap()).abs() < 1e-12);
        prop_assert!(pinball(&p1, &y1, &DECILES).unwrap() >= 0.0);
    }
}
