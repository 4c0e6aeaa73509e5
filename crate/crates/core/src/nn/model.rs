use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mlp,
    Rnn,
}

/// Element-wise activations. All are 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Activation::Identity => a,
        }
    }

    /// Derivative evaluated at the pre-activation `a`.
    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-a).exp());
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// How logits are turned into predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Readout {
    /// Regression: the readout output is the prediction.
    Identity,
    /// Classification: softmax over the readout output.
    Softmax,
}

/// Row structure of one weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
    pub droppable: bool,
}

/// Architecture of an equal-width MLP or an Elman RNN, both followed by a
/// non-droppable readout matrix.
///
/// MLP matrices: `W_1 (D x d)`, `W_2..W_L (D x D)`, readout `(out x D)`.
/// RNN matrices: `W_x (D x d)`, `W_h (D x D)`, readout `(out x D)`; `layers`
/// is the unroll length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub readout: Readout,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden_dim: usize, layers: usize, output_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            layers,
            input_dim,
            hidden_dim,
            output_dim,
            hidden_activation: Activation::Relu,
            readout: Readout::Softmax,
        }
    }

    pub fn rnn(input_dim: usize, hidden_dim: usize, unroll: usize, output_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Rnn,
            layers: unroll,
            input_dim,
            hidden_dim,
            output_dim,
            hidden_activation: Activation::Tanh,
            readout: Readout::Softmax,
        }
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.hidden_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::input("model needs at least one layer"));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::input("model dimensions must be positive"));
        }
        Ok(())
    }

    pub fn matrix_shapes(&self) -> Vec<MatrixShape> {
        let d = self.input_dim;
        let h = self.hidden_dim;
        let mut shapes = Vec::new();
        match self.kind {
            ModelKind::Mlp => {
                for l in 0..self.layers {
                    shapes.push(MatrixShape {
                        rows: h,
                        cols: if l == 0 { d } else { h },
                        droppable: true,
                    });
                }
            }
            ModelKind::Rnn => {
                shapes.push(MatrixShape {
                    rows: h,
                    cols: d,
                    droppable: true,
                });
                shapes.push(MatrixShape {
                    rows: h,
                    cols: h,
                    droppable: true,
                });
            }
        }
        shapes.push(MatrixShape {
            rows: self.output_dim,
            cols: h,
            droppable: false,
        });
        shapes
    }

    /// Total scalar weight count `N`.
    pub fn param_count(&self) -> usize {
        self.matrix_shapes().iter().map(|s| s.rows * s.cols).sum()
    }

    /// Total droppable row count `J`.
    pub fn droppable_rows(&self) -> usize {
        self.matrix_shapes()
            .iter()
            .filter(|s| s.droppable)
            .map(|s| s.rows)
            .sum()
    }
}

/// Weights (or variational means) of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub matrices: Vec<Matrix>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let matrices = spec
            .matrix_shapes()
            .iter()
            .map(|s| Matrix::zeros(s.rows, s.cols))
            .collect();
        ModelParams {
            spec: spec.clone(),
            matrices,
        }
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let matrices = spec
            .matrix_shapes()
            .iter()
            .map(|s| {
                let sd = 1.0 / (s.cols as f64).sqrt();
                Matrix::from_fn(s.rows, s.cols, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    sd * z
                })
            })
            .collect();
        ModelParams {
            spec: spec.clone(),
            matrices,
        }
    }

    pub fn from_matrices(spec: &ModelSpec, matrices: Vec<Matrix>) -> Result<Self> {
        let shapes = spec.matrix_shapes();
        if shapes.len() != matrices.len() {
            return Err(Error::shape(format!(
                "{} matrices given, architecture has {}",
                matrices.len(),
                shapes.len()
            )));
        }
        for (k, (s, m)) in shapes.iter().zip(&matrices).enumerate() {
            if (s.rows, s.cols) != m.shape() {
                return Err(Error::shape(format!(
                    "matrix {k} is {:?}, expected {:?}",
                    m.shape(),
                    (s.rows, s.cols)
                )));
            }
        }
        Ok(ModelParams {
            spec: spec.clone(),
            matrices,
        })
    }

    pub fn param_count(&self) -> usize {
        self.matrices.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices.iter().all(Matrix::is_finite)
    }

    pub fn congruent(&self, other: &ModelParams) -> bool {
        self.matrices.len() == other.matrices.len()
            && self
                .matrices
                .iter()
                .zip(&other.matrices)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// `self += alpha * g`
    pub fn axpy(&mut self, alpha: f64, g: &GradientSet) {
        for (m, gm) in self.matrices.iter_mut().zip(&g.matrices) {
            m.axpy(alpha, gm);
        }
    }

    /// All entries flattened matrix by matrix, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrices
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }
}

/// Gradients congruent with a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub matrices: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            matrices: params
                .matrices
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.matrices.iter_mut().zip(&other.matrices) {
            a.axpy(1.0, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.matrices.iter_mut().for_each(|m| m.scale(alpha));
    }

    pub fn is_zero(&self) -> bool {
        self.matrices
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v == 0.0))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.matrices
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }
}
