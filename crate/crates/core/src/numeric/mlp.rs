//! Fully connected networks.

use rand::Rng;

use super::matrix::{dot, Matrix};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::contract(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weights and biases of a multilayer perceptron.
///
/// `weights[k]` is `layer_sizes[k+1] × layer_sizes[k]`. Hidden layers apply the
/// activation; the output layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl MlpParams {
    pub fn new(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::contract(format!(
                "expected {layers} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for k in 0..layers {
            let want = (layer_sizes[k + 1], layer_sizes[k]);
            if weights[k].shape() != want {
                return Err(Error::Dimension {
                    op: "mlp weights",
                    left: weights[k].shape(),
                    right: want,
                });
            }
            if biases[k].len() != layer_sizes[k + 1] {
                return Err(Error::Dimension {
                    op: "mlp biases",
                    left: (1, biases[k].len()),
                    right: (1, layer_sizes[k + 1]),
                });
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            activation,
        })
    }

    /// Uniform fan-in initialization: every weight and bias of layer `k` is
    /// drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(layer_sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::contract(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, w)?);
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Self::new(layer_sizes.to_vec(), weights, biases, activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameter buffers in the order `W0, b0, W1, b1, ...`.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    /// Plain forward pass for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                op: "mlp_forward",
                left: (1, x.len()),
                right: (1, self.input_dim()),
            });
        }
        let mut h = x.to_vec();
        let last = self.num_layers() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next: Vec<f64> = w.row_iter().zip(b).map(|(row, bb)| dot(row, &h) + bb).collect();
            if k != last {
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Registers every weight and bias as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(tape.leaf(w.clone()));
            biases.push(tape.leaf(Matrix::row_vector(b)));
        }
        MlpNodes {
            weights,
            biases,
            activation: self.activation,
        }
    }
}

/// Tape handles for a registered [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpNodes {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    activation: Activation,
}

impl MlpNodes {
    /// Applies the network to every row of `input`.
    pub fn apply(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let mut h = input;
        let last = self.weights.len() - 1;
        for (k, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = tape.linear(h, w, b)?;
            if k != last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Leaf ids in the same order as [`MlpParams::buffers`].
    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_single_layer_passes_input_through() {
        let p = MlpParams::new(vec![3, 3], vec![Matrix::identity(3)], vec![vec![0.0; 3]], Activation::Relu).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let p = MlpParams::new(
            vec![2, 4, 2],
            vec![Matrix::zeros(4, 2), Matrix::zeros(2, 4)],
            vec![vec![0.3; 4], vec![1.5, -0.5]],
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(p.forward(&[7.0, 9.0]).unwrap(), vec![1.5, -0.5]);
    }

    #[test]
    fn hand_evaluated_two_three_one_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::init(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let x = [0.7, -1.3];
        let w0 = &p.weights()[0];
        let b0 = &p.biases()[0];
        let w1 = &p.weights()[1];
        let b1 = &p.biases()[1];
        let h0 = (w0[(0, 0)] * x[0] + w0[(0, 1)] * x[1] + b0[0]).max(0.0);
        let h1 = (w0[(1, 0)] * x[0] + w0[(1, 1)] * x[1] + b0[1]).max(0.0);
        let h2 = (w0[(2, 0)] * x[0] + w0[(2, 1)] * x[1] + b0[2]).max(0.0);
        let y = w1[(0, 0)] * h0 + w1[(0, 1)] * h1 + w1[(0, 2)] * h2 + b1[0];
        let got = p.forward(&x).unwrap();
        assert!((got[0] - y).abs() < 1e-14, "{} vs {y}", got[0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = MlpParams::init(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shape_checks_on_construction() {
        assert!(MlpParams::new(vec![2], vec![], vec![], Activation::Relu).is_err());
        assert!(MlpParams::new(vec![2, 3], vec![Matrix::zeros(2, 3)], vec![vec![0.0; 3]], Activation::Relu).is_err());
        assert!(MlpParams::new(vec![2, 3], vec![Matrix::zeros(3, 2)], vec![vec![0.0; 2]], Activation::Relu).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::init(&[16, 8, 4], Activation::Relu, &mut rng).unwrap();
        assert!(p.weights()[0].as_slice().iter().all(|w| w.abs() <= 0.25));
        assert!(p.weights()[1].as_slice().iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn forward_is_bitwise_deterministic_and_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&[4, 6, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let x = [0.1, -0.4, 2.0, 0.0];
        let a = p.forward(&x).unwrap();
        let b = p.forward(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let mut tape = Tape::new();
        let nodes = p.register(&mut tape);
        let input = tape.leaf(Matrix::row_vector(&x));
        let out = nodes.apply(&mut tape, input).unwrap();
        for (t, f) in tape.value(out).as_slice().iter().zip(&a) {
            assert!((t - f).abs() < 1e-14);
        }
    }
}
