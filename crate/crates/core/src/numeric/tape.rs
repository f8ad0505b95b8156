//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation appends one node to the [`Tape`]; node ids are therefore
//! already a topological order, and [`Tape::backward`] simply walks them in
//! reverse. Only the primitives the neural-process models need are provided.

use super::matrix::{order_free_sum, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `x·Wᵀ + b` with `b` a `1×out` row broadcast over rows.
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Row `t·n + i` is `[left_i, right_t]` for `n` left rows.
    PairConcat(NodeId, NodeId),
    Reshape(NodeId),
    SoftmaxRows {
        input: NodeId,
        temperature: f64,
    },
    /// `out_t = Σ_i w_ti · r_i` with an order-independent sum.
    Aggregate {
        weights: NodeId,
        reps: NodeId,
    },
    SliceCols {
        input: NodeId,
        start: usize,
    },
    Softplus(NodeId),
    Offset(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    GaussianNll {
        mean: NodeId,
        var: NodeId,
        target: Matrix,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `id`. Leaves always have one after a backward pass.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn dim_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    /// Records an input. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(self.dim_err("matmul", a, b));
        }
        let v = self.value(a).matmul_unchecked(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, in_dim) = self.shape(input);
        let (out_dim, w_in) = self.shape(weight);
        if in_dim != w_in {
            return Err(self.dim_err("linear", input, weight));
        }
        if self.shape(bias) != (1, out_dim) {
            return Err(self.dim_err("linear bias", weight, bias));
        }
        let mut v = self.value(input).matmul_transpose_b(self.value(weight));
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        Ok(self.push(
            v,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("add", a, b));
        }
        let v = self.value(a).zip_with(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(self.dim_err("concat_cols", a, b));
        }
        let mut v = Matrix::zeros(ra, ca + cb);
        for r in 0..ra {
            let row = v.row_mut(r);
            row[..ca].copy_from_slice(self.nodes[a.0].value.row(r));
            row[ca..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// All `(left_i, right_t)` pairs as concatenated rows, right-major.
    pub fn pair_concat(&mut self, left: NodeId, right: NodeId) -> NodeId {
        let (nl, cl) = self.shape(left);
        let (nr, cr) = self.shape(right);
        let mut v = Matrix::zeros(nl * nr, cl + cr);
        for t in 0..nr {
            for i in 0..nl {
                let row = v.row_mut(t * nl + i);
                row[..cl].copy_from_slice(self.nodes[left.0].value.row(i));
                row[cl..].copy_from_slice(self.nodes[right.0].value.row(t));
            }
        }
        self.push(v, Op::PairConcat(left, right))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = Matrix::from_vec(rows, cols, self.value(x).as_slice().to_vec())?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Row-wise `softmax(x / temperature)`, max-shifted.
    pub fn softmax_rows(&mut self, input: NodeId, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::contract(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        let x = self.value(input);
        let mut v = Matrix::zeros(x.rows(), x.cols());
        let mut buf = Vec::with_capacity(x.cols());
        for r in 0..x.rows() {
            softmax_into(x.row(r), temperature, v.row_mut(r), &mut buf);
        }
        Ok(self.push(v, Op::SoftmaxRows { input, temperature }))
    }

    pub fn aggregate(&mut self, weights: NodeId, reps: NodeId) -> Result<NodeId> {
        if self.shape(weights).1 != self.shape(reps).0 {
            return Err(self.dim_err("aggregate", weights, reps));
        }
        let v = weighted_rows(self.value(weights), self.value(reps));
        Ok(self.push(v, Op::Aggregate { weights, reps }))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(input);
        if start > end || end > cols {
            return Err(Error::contract(format!(
                "column slice {start}..{end} out of range for {cols} columns"
            )));
        }
        let x = self.value(input);
        let mut v = Matrix::zeros(rows, end - start);
        for r in 0..rows {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        Ok(self.push(v, Op::SliceCols { input, start }))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(softplus);
        self.push(v, Op::Softplus(x))
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::Offset(x))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let v = self.value(x).scale(k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).as_slice().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    /// Mean Gaussian negative log-likelihood of a constant target.
    pub fn gaussian_nll(&mut self, mean: NodeId, var: NodeId, target: &Matrix) -> Result<NodeId> {
        if self.shape(mean) != self.shape(var) {
            return Err(self.dim_err("gaussian_nll", mean, var));
        }
        if self.shape(mean) != target.shape() {
            return Err(Error::Dimension {
                op: "gaussian_nll target",
                left: self.shape(mean),
                right: target.shape(),
            });
        }
        let nll = crate::metrics::gaussian_nll_values(
            self.value(mean).as_slice(),
            self.value(var).as_slice(),
            target.as_slice(),
        )?;
        Ok(self.push(
            Matrix::filled(1, 1, nll),
            Op::GaussianNll {
                mean,
                var,
                target: target.clone(),
            },
        ))
    }

    /// Reverse-mode sweep from a `1×1` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss node, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_transpose_b(self.value(*b));
                    let db = self.value(*a).transpose_a_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let dx = g.matmul_unchecked(self.value(*weight));
                    let dw = g.transpose_a_matmul(self.value(*input));
                    let mut db = Matrix::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Relu(x) => {
                    let dx = g.zip_with(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = g.zip_with(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let (rows, cols) = g.shape();
                    let mut da = Matrix::zeros(rows, ca);
                    let mut db = Matrix::zeros(rows, cols - ca);
                    for r in 0..rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::PairConcat(left, right) => {
                    let (nl, cl) = self.shape(*left);
                    let (nr, cr) = self.shape(*right);
                    let mut dl = Matrix::zeros(nl, cl);
                    let mut dr = Matrix::zeros(nr, cr);
                    for t in 0..nr {
                        for i in 0..nl {
                            let grow = g.row(t * nl + i);
                            for (d, v) in dl.row_mut(i).iter_mut().zip(&grow[..cl]) {
                                *d += v;
                            }
                            for (d, v) in dr.row_mut(t).iter_mut().zip(&grow[cl..]) {
                                *d += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *left, dl);
                    accumulate(&mut grads, *right, dr);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.shape(*x);
                    let dx = Matrix::from_vec(r, c, g.into_vec())?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows { input, temperature } => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - inner) / temperature;
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Aggregate { weights, reps } => {
                    let dw = g.matmul_transpose_b(self.value(*reps));
                    let dr = self.value(*weights).transpose_a_matmul(&g);
                    accumulate(&mut grads, *weights, dw);
                    accumulate(&mut grads, *reps, dr);
                }
                Op::SliceCols { input, start } => {
                    let (rows, cols) = self.shape(*input);
                    let mut dx = Matrix::zeros(rows, cols);
                    let w = g.cols();
                    for r in 0..rows {
                        dx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Softplus(x) => {
                    let dx = g.zip_with(self.value(*x), |gv, xv| gv * sigmoid(xv));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Offset(x) => accumulate(&mut grads, *x, g),
                Op::Scale(x, k) => accumulate(&mut grads, *x, g.scale(*k)),
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::GaussianNll { mean, var, target } => {
                    let upstream = g[(0, 0)];
                    let mu = self.value(*mean);
                    let v = self.value(*var);
                    let n = mu.len() as f64;
                    let (rows, cols) = mu.shape();
                    let mut dmu = Matrix::zeros(rows, cols);
                    let mut dvar = Matrix::zeros(rows, cols);
                    for k in 0..mu.len() {
                        let resid = target.as_slice()[k] - mu.as_slice()[k];
                        let s2 = v.as_slice()[k];
                        dmu.as_mut_slice()[k] = -upstream * resid / s2 / n;
                        dvar.as_mut_slice()[k] =
                            upstream * (0.5 / s2 - resid * resid / (2.0 * s2 * s2)) / n;
                    }
                    accumulate(&mut grads, *mean, dmu);
                    accumulate(&mut grads, *var, dvar);
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                let (r, c) = node.value.shape();
                grads[idx] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign_unchecked(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of `scores / temperature` written into `out`.
pub(crate) fn softmax_into(scores: &[f64], temperature: f64, out: &mut [f64], buf: &mut Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = ((s - max) / temperature).exp();
    }
    buf.clear();
    buf.extend_from_slice(out);
    let total = order_free_sum(buf);
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `out_t = Σ_i w_ti · r_i`, summed independently of context order.
pub(crate) fn weighted_rows(weights: &Matrix, reps: &Matrix) -> Matrix {
    let (nt, nc) = weights.shape();
    let dr = reps.cols();
    let mut out = Matrix::zeros(nt, dr);
    let mut terms = vec![0.0; nc];
    for t in 0..nt {
        let w = weights.row(t);
        for c in 0..dr {
            for (i, term) in terms.iter_mut().enumerate() {
                *term = w[i] * reps[(i, c)];
            }
            out[(t, c)] = order_free_sum(&mut terms);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        let c = tape.scale(p, 0.0);
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_of_parameters_has_unit_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn unused_leaf_still_gets_a_buffer() {
        let mut tape = Tape::new();
        let unused = tape.leaf(Matrix::zeros(2, 3));
        let p = tape.leaf(Matrix::filled(1, 1, 2.0));
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().shape(), (2, 3));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::zeros(1, 3));
        assert!(tape.softmax_rows(p, 0.0).is_err());
        assert!(tape.softmax_rows(p, -1.0).is_err());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
