use adacnp::detect::{detect_extremes, dtw_distance, DailyCurve, DetectConfig};
use adacnp::training::fork_rng;
use adacnp::Regime;
use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use rand::Rng;

/// Minimum cost over every monotone warping path. Each path's cost is
/// accumulated from its first cell onward.
fn brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = (a[i] - b[j]).abs() + acc;
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn dtw_equals_path_enumeration_on_short_sequences() {
    let mut rng = fork_rng(6, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert_eq!(dtw_distance(&a, &b).unwrap(), brute_force(&a, &b), "{a:?} {b:?}");
    }
}

proptest! {
    #[test]
    fn dtw_is_a_bounded_symmetric_dissimilarity(
        a in prop::collection::vec(-10.0f64..10.0, 1..24),
        b in prop::collection::vec(-10.0f64..10.0, 1..24),
    ) {
        let ab = dtw_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, dtw_distance(&b, &a).unwrap());
        prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        if a.len() == b.len() {
            let identity: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(ab <= identity + 1e-12);
        }
    }
}

fn days(values: &[Vec<f64>]) -> Vec<DailyCurve> {
    let start = NaiveDate::from_ymd_opt(2020, 5, 1).unwrap();
    values
        .iter()
        .enumerate()
        .map(|(i, v)| DailyCurve::new(start + Duration::days(i as i64), v.clone()).unwrap())
        .collect()
}

#[test]
fn spike_among_constant_days_is_the_only_extreme() {
    let flat = vec![10.0; 24];
    let mut spike = flat.clone();
    for v in spike.iter_mut().skip(12).take(6) {
        *v = 60.0;
    }
    let mut values = vec![flat.clone(); 15];
    values.insert(8, spike.clone());
    let curves = days(&values);
    let labels = detect_extremes(&curves, &DetectConfig::default()).unwrap();

    // scripted recomputation of every score and decision
    let n = values.len();
    let d_spike = dtw_distance(&spike, &flat).unwrap();
    let score = |d: usize| -> f64 {
        let lo = d.saturating_sub(7);
        let hi = (d + 7).min(n - 1);
        let others: Vec<usize> = (lo..=hi).filter(|&j| j != d).collect();
        let total: f64 = others.iter().map(|&j| if j == 8 || d == 8 { d_spike } else { 0.0 }).sum();
        total / others.len() as f64
    };
    let scores: Vec<f64> = (0..n).map(score).collect();
    for d in 0..n {
        let lo = d.saturating_sub(7);
        let hi = (d + 7).min(n - 1);
        let w: Vec<f64> = (lo..=hi).map(|j| scores[j]).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / w.len() as f64).sqrt();
        let got = &labels.days[d];
        assert!((got.score - scores[d]).abs() < 1e-12);
        assert!((got.window_mean - mean).abs() < 1e-12);
        assert!((got.window_std - sd).abs() < 1e-12);
        assert_eq!(got.label == Regime::Extreme, scores[d] > mean + 3.0 * sd);
    }
    let extremes: Vec<_> = labels.extremes().collect();
    assert_eq!(extremes, vec![curves[8].date]);
}

#[test]
fn common_scaling_preserves_labels_with_normalization() {
    let mut rng = fork_rng(12, 0);
    let mut values: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..24).map(|h| 100.0 + 20.0 * (h as f64 / 4.0).sin() + rng.random_range(-2.0..2.0)).collect())
        .collect();
    for v in values[14].iter_mut().skip(6).take(4) {
        *v *= 1.8;
    }
    let cfg = DetectConfig { normalize: true, ..DetectConfig::default() };
    let base = detect_extremes(&days(&values), &cfg).unwrap();
    let scaled: Vec<Vec<f64>> = values.iter().map(|v| v.iter().map(|x| x * 7.5).collect()).collect();
    let other = detect_extremes(&days(&scaled), &cfg).unwrap();
    let a: Vec<_> = base.days.iter().map(|d| d.label).collect();
    let b: Vec<_> = other.days.iter().map(|d| d.label).collect();
    assert_eq!(a, b);
    assert!(a[14].is_extreme());
}

#[test]
fn excluding_the_candidate_changes_only_the_statistics() {
    let mut values = vec![vec![5.0; 24]; 20];
    values[10] = vec![9.0; 24];
    let inc = detect_extremes(&days(&values), &DetectConfig::default()).unwrap();
    let exc = detect_extremes(&days(&values), &DetectConfig { exclude_self: true, ..DetectConfig::default() }).unwrap();
    for (a, b) in inc.days.iter().zip(&exc.days) {
        assert_eq!(a.score, b.score);
    }
    assert!(exc.days[10].window_mean < inc.days[10].window_mean);
}
