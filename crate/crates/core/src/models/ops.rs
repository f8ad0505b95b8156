//! Stand-alone entry points for each stage of the CNP / AdaCNP pipeline.

use super::bundle::{ModelBundle, VARIANCE_FLOOR};
use super::graph::{self, forward};
use super::types::{ContextSet, GaussianPrediction, TargetBatch, WeightMatrix};
use super::NeuralKind;
use crate::error::{Error, Result};
use crate::numeric::tape::{softmax_into, softplus, weighted_rows};
use crate::numeric::{Matrix, Tape};

/// `r_i = h([x_i, y_i])` for every context point, as an `n_c × d_r` matrix.
pub fn encode_context(bundle: &ModelBundle, ctx: &ContextSet) -> Result<Matrix> {
    if ctx.x_dim() != bundle.x_dim() || ctx.y_dim() != bundle.y_dim() {
        return Err(Error::contract("context dimensions do not match the encoder"));
    }
    let mut tape = Tape::new();
    let nodes = bundle.register(&mut tape);
    let reps = graph::encode(&mut tape, &nodes, ctx)?;
    Ok(tape.value(reps).clone())
}

/// Mean over the context axis, `Σ_i (1/n_c)·r_i`.
pub fn uniform_aggregate(reps: &Matrix) -> Result<Vec<f64>> {
    let n = reps.rows();
    if n == 0 {
        return Err(Error::contract("cannot aggregate an empty representation set"));
    }
    let w = vec![1.0 / n as f64; n];
    weighted_aggregate(&w, reps)
}

/// `Σ_i w_i·r_i`, summed independently of context order.
pub fn weighted_aggregate(weights: &[f64], reps: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != reps.rows() || weights.is_empty() {
        return Err(Error::contract(format!(
            "{} weights for {} representations",
            weights.len(),
            reps.rows()
        )));
    }
    Ok(weighted_rows(&Matrix::row_vector(weights), reps).into_vec())
}

/// Shared embedding `φ(x)` for each row of `xs`.
pub fn embed(bundle: &ModelBundle, xs: &Matrix) -> Result<Matrix> {
    if xs.cols() != bundle.x_dim() {
        return Err(Error::contract(format!(
            "embedding expects dimension {}, got {}",
            bundle.x_dim(),
            xs.cols()
        )));
    }
    let mut tape = Tape::new();
    let nodes = bundle.register(&mut tape);
    let x = tape.leaf(xs.clone());
    let e = nodes.embedding.apply(&mut tape, x)?;
    Ok(tape.value(e).clone())
}

/// Relevance score `f([e_ctx, e_tgt])`.
pub fn score(bundle: &ModelBundle, e_ctx: &[f64], e_tgt: &[f64]) -> Result<f64> {
    let d_e = bundle.embedding_dim();
    if e_ctx.len() != d_e || e_tgt.len() != d_e {
        return Err(Error::contract(format!(
            "scorer expects two embeddings of dimension {d_e}, got {} and {}",
            e_ctx.len(),
            e_tgt.len()
        )));
    }
    let input: Vec<f64> = e_ctx.iter().chain(e_tgt).copied().collect();
    let s = bundle.scorer().forward(&input)?;
    Ok(s[0])
}

/// `w_i = exp(s_i/τ) / Σ exp(s_i'/τ)`, max-shifted.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::contract(format!("temperature must be positive, got {temperature}")));
    }
    if scores.is_empty() {
        return Err(Error::contract("softmax over an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, temperature, &mut out, &mut Vec::new());
    Ok(out)
}

/// Decoder head for one target: `(μ, σ²)` with `σ² = softplus(raw) + floor`.
pub fn decode(bundle: &ModelBundle, x_t: &[f64], r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_t.len() != bundle.x_dim() || r.len() != bundle.representation_dim() {
        return Err(Error::contract(format!(
            "decoder expects ({}, {}) inputs, got ({}, {})",
            bundle.x_dim(),
            bundle.representation_dim(),
            x_t.len(),
            r.len()
        )));
    }
    let input: Vec<f64> = x_t.iter().chain(r).copied().collect();
    let raw = bundle.decoder().forward(&input)?;
    let d_y = bundle.y_dim();
    let mean = raw[..d_y].to_vec();
    let var = raw[d_y..].iter().map(|&v| softplus(v) + VARIANCE_FLOOR).collect();
    Ok((mean, var))
}

fn run(
    kind: NeuralKind,
    bundle: &ModelBundle,
    ctx: &ContextSet,
    targets: &TargetBatch,
) -> Result<(GaussianPrediction, Matrix)> {
    let mut tape = Tape::new();
    let nodes = bundle.register(&mut tape);
    let out = forward(&mut tape, kind, bundle, &nodes, ctx, targets)?;
    let pred = GaussianPrediction::new(tape.value(out.mean).clone(), tape.value(out.var).clone())?;
    Ok((pred, tape.value(out.weights).clone()))
}

/// CNP: encode, mean-aggregate, decode every target.
pub fn cnp_predict(bundle: &ModelBundle, ctx: &ContextSet, targets: &TargetBatch) -> Result<GaussianPrediction> {
    run(NeuralKind::Cnp, bundle, ctx, targets).map(|(p, _)| p)
}

/// AdaCNP: target-conditioned softmax weighting of the context representations.
pub fn adacnp_predict(
    bundle: &ModelBundle,
    ctx: &ContextSet,
    targets: &TargetBatch,
) -> Result<(GaussianPrediction, WeightMatrix)> {
    let (pred, w) = run(NeuralKind::AdaCnp, bundle, ctx, targets)?;
    Ok((pred, WeightMatrix::new(w)?))
}

/// Mean Gaussian NLL of `y` under `pred`.
pub fn gaussian_nll(pred: &GaussianPrediction, y: &Matrix) -> Result<f64> {
    crate::metrics::nll_mean(pred, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_forms() {
        let w = softmax_weights(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);

        let e2 = 1f64.exp().powi(2);
        let w = softmax_weights(&[1.0, 0.0], 0.5).unwrap();
        assert!((w[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((w[0] - 0.88080).abs() < 1e-5);
        assert!((w[1] - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn softmax_equal_scores_are_uniform() {
        for tau in [0.01, 1.0, 1e6] {
            let w = softmax_weights(&[3.3; 7], tau).unwrap();
            assert!(w.iter().all(|&v| v == 1.0 / 7.0));
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature_and_scores() {
        assert!(softmax_weights(&[1.0], 0.0).is_err());
        assert!(softmax_weights(&[1.0], -1.0).is_err());
        assert!(softmax_weights(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn aggregation_cases() {
        let reps = Matrix::from_rows(&[[1.0, 2.0], [-1.0, -2.0]]).unwrap();
        assert_eq!(uniform_aggregate(&reps).unwrap(), vec![0.0, 0.0]);
        assert_eq!(weighted_aggregate(&[0.0, 1.0], &reps).unwrap(), vec![-1.0, -2.0]);
        let same = Matrix::from_rows(&[[0.3, 7.0], [0.3, 7.0], [0.3, 7.0]]).unwrap();
        let m = uniform_aggregate(&same).unwrap();
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 7.0).abs() < 1e-14);
        assert!(uniform_aggregate(&Matrix::zeros(0, 2)).is_err());
        assert!(weighted_aggregate(&[1.0], &reps).is_err());
    }

    #[test]
    fn uniform_weights_reduce_exactly_to_mean() {
        let reps = Matrix::from_rows(&[[0.1, 2.5], [3.7, -1.2], [0.05, 9.9]]).unwrap();
        let w = softmax_weights(&[0.4, 0.4, 0.4], 2.0).unwrap();
        assert_eq!(weighted_aggregate(&w, &reps).unwrap(), uniform_aggregate(&reps).unwrap());
    }
}
