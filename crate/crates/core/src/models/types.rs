use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Observed input/output pairs that condition a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    inputs: Matrix,
    outputs: Matrix,
}

impl ContextSet {
    pub fn new(inputs: Matrix, outputs: Matrix) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::contract("a context set needs at least one point"));
        }
        if inputs.rows() != outputs.rows() {
            return Err(Error::Dimension {
                op: "context set",
                left: inputs.shape(),
                right: outputs.shape(),
            });
        }
        if inputs.cols() == 0 || outputs.cols() == 0 {
            return Err(Error::contract("context inputs and outputs need positive dimension"));
        }
        Ok(Self { inputs, outputs })
    }

    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(xs)?, Matrix::from_rows(ys)?)
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn y_dim(&self) -> usize {
        self.outputs.cols()
    }

    /// Reorders the points; `order[k]` is the source index of new point `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let xs: Vec<&[f64]> = order.iter().map(|&i| self.inputs.row(i)).collect();
        let ys: Vec<&[f64]> = order.iter().map(|&i| self.outputs.row(i)).collect();
        Self::new(Matrix::from_rows(&xs)?, Matrix::from_rows(&ys)?)
    }
}

/// Query inputs, optionally with the true outputs for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    inputs: Matrix,
    outputs: Option<Matrix>,
}

impl TargetBatch {
    pub fn new(inputs: Matrix, outputs: Option<Matrix>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::contract("a target batch needs at least one point"));
        }
        if let Some(y) = &outputs {
            if y.rows() != inputs.rows() {
                return Err(Error::Dimension {
                    op: "target batch",
                    left: inputs.shape(),
                    right: y.shape(),
                });
            }
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs_only(inputs: Matrix) -> Result<Self> {
        Self::new(inputs, None)
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> Option<&Matrix> {
        self.outputs.as_ref()
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-target diagonal Gaussian: means and variances, `n_t × d_y` each.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    mean: Matrix,
    var: Matrix,
}

impl GaussianPrediction {
    pub fn new(mean: Matrix, var: Matrix) -> Result<Self> {
        if mean.shape() != var.shape() {
            return Err(Error::Dimension {
                op: "gaussian prediction",
                left: mean.shape(),
                right: var.shape(),
            });
        }
        if !mean.is_finite() {
            return Err(Error::numerical("predicted mean is not finite"));
        }
        if var.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::numerical("predicted variance is negative or not finite"));
        }
        Ok(Self { mean, var })
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    pub fn var(&self) -> &Matrix {
        &self.var
    }

    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_variance(&self) -> f64 {
        self.var.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Row-stochastic `n_t × n_c` weights of targets over contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Matrix,
}

impl WeightMatrix {
    pub fn new(w: Matrix) -> Result<Self> {
        for (t, row) in w.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::contract(format!("weight row {t} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::contract(format!("weight row {t} sums to {s}")));
            }
        }
        Ok(Self { w })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.w.row(t)
    }
}
