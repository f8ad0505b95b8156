//! Differentiable forward passes of CNP and AdaCNP on a [`Tape`].

use super::bundle::{BundleNodes, ModelBundle, VARIANCE_FLOOR};
use super::types::{ContextSet, TargetBatch};
use super::NeuralKind;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, Tape};

/// Nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub reps: NodeId,
    pub weights: NodeId,
    pub aggregated: NodeId,
    pub mean: NodeId,
    pub var: NodeId,
}

pub(crate) fn check_dims(bundle: &ModelBundle, ctx: &ContextSet, targets: &TargetBatch) -> Result<()> {
    if ctx.x_dim() != bundle.x_dim() || ctx.y_dim() != bundle.y_dim() {
        return Err(Error::contract(format!(
            "context dimensions ({}, {}) do not match the model ({}, {})",
            ctx.x_dim(),
            ctx.y_dim(),
            bundle.x_dim(),
            bundle.y_dim()
        )));
    }
    if targets.inputs().cols() != bundle.x_dim() {
        return Err(Error::contract(format!(
            "target input dimension {} does not match the model's {}",
            targets.inputs().cols(),
            bundle.x_dim()
        )));
    }
    Ok(())
}

/// Encoder applied to `[x, y]` rows of the context.
pub(crate) fn encode(tape: &mut Tape, nodes: &BundleNodes, ctx: &ContextSet) -> Result<NodeId> {
    let x = tape.leaf(ctx.inputs().clone());
    let y = tape.leaf(ctx.outputs().clone());
    let xy = tape.concat_cols(x, y)?;
    nodes.encoder.apply(tape, xy)
}

/// Relevance weights `n_t × n_c` from the embedding network and scorer.
pub(crate) fn adaptive_weights(
    tape: &mut Tape,
    nodes: &BundleNodes,
    ctx_x: NodeId,
    tgt_x: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    let n_c = tape.value(ctx_x).rows();
    let n_t = tape.value(tgt_x).rows();
    let e_ctx = nodes.embedding.apply(tape, ctx_x)?;
    let e_tgt = nodes.embedding.apply(tape, tgt_x)?;
    // context-first concatenation
    let pairs = tape.pair_concat(e_ctx, e_tgt);
    let scores = nodes.scorer.apply(tape, pairs)?;
    let scores = tape.reshape(scores, n_t, n_c)?;
    tape.softmax_rows(scores, temperature)
}

/// Decoder head: mean and `softplus(raw) + floor` variance.
pub(crate) fn decode_nodes(
    tape: &mut Tape,
    nodes: &BundleNodes,
    tgt_x: NodeId,
    aggregated: NodeId,
    y_dim: usize,
) -> Result<(NodeId, NodeId)> {
    let input = tape.concat_cols(tgt_x, aggregated)?;
    let raw = nodes.decoder.apply(tape, input)?;
    let mean = tape.slice_cols(raw, 0, y_dim)?;
    let raw_var = tape.slice_cols(raw, y_dim, 2 * y_dim)?;
    let sp = tape.softplus(raw_var);
    let var = tape.offset(sp, VARIANCE_FLOOR);
    Ok((mean, var))
}

pub fn forward(
    tape: &mut Tape,
    kind: NeuralKind,
    bundle: &ModelBundle,
    nodes: &BundleNodes,
    ctx: &ContextSet,
    targets: &TargetBatch,
) -> Result<ForwardNodes> {
    check_dims(bundle, ctx, targets)?;
    let n_c = ctx.len();
    let n_t = targets.len();
    let reps = encode(tape, nodes, ctx)?;
    let tgt_x = tape.leaf(targets.inputs().clone());
    let weights = match kind {
        NeuralKind::Cnp => tape.leaf(Matrix::filled(n_t, n_c, 1.0 / n_c as f64)),
        NeuralKind::AdaCnp => {
            let ctx_x = tape.leaf(ctx.inputs().clone());
            adaptive_weights(tape, nodes, ctx_x, tgt_x, bundle.temperature())?
        }
    };
    let aggregated = tape.aggregate(weights, reps)?;
    let (mean, var) = decode_nodes(tape, nodes, tgt_x, aggregated, bundle.y_dim())?;
    Ok(ForwardNodes {
        reps,
        weights,
        aggregated,
        mean,
        var,
    })
}

/// One training example: a context set and targets with known outputs.
pub trait EpisodeData {
    fn context(&self) -> &ContextSet;
    fn targets(&self) -> &TargetBatch;
}

/// Mean NLL over a batch of episodes and its gradient for every bundle buffer.
pub fn loss_and_gradients<E: EpisodeData>(
    kind: NeuralKind,
    bundle: &ModelBundle,
    episodes: &[E],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if episodes.is_empty() {
        return Err(Error::contract("no episodes in the batch"));
    }
    let mut tape = Tape::new();
    let nodes = bundle.register(&mut tape);
    let mut losses = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let truth = ep
            .targets()
            .outputs()
            .ok_or_else(|| Error::contract("training targets need outputs"))?;
        let out = forward(&mut tape, kind, bundle, &nodes, ep.context(), ep.targets())?;
        losses.push(tape.gaussian_nll(out.mean, out.var, truth)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let loss = tape.scale(total, 1.0 / episodes.len() as f64);
    let value = tape.value(loss)[(0, 0)];
    let mut grads = tape.backward(loss)?;
    let flat = nodes
        .leaves()
        .into_iter()
        .map(|id| grads.take(id).expect("leaf gradient").into_vec())
        .collect();
    Ok((value, flat))
}
