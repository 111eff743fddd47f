//! Affine layer `y = x W^T + b` over batches of row vectors.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{init_params, InitScheme};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A dense layer. Weights are row-major with shape `(out_dim, in_dim)` so each
/// output unit owns one contiguous weight row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of the affine map for one batch.
#[derive(Debug)]
pub struct DenseBackward {
    pub grad_input: Matrix,
    pub grad_weights: Matrix,
    pub grad_bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer::new",
                expected: format!("bias of length {}", weights.rows()),
                actual: format!("bias of length {}", bias.len()),
            });
        }
        if !weights.is_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseLayer::new".into(),
            });
        }
        Ok(Self { weights, bias })
    }

    /// Initializes weights per `scheme` and the bias to zero.
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        scheme: InitScheme,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weights = init_params(out_dim, in_dim, scheme, rng)?;
        Ok(Self {
            weights,
            bias: vec![0.0; out_dim],
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `y[b] = W x[b] + bias` for every row of the batch. An empty batch
    /// produces an empty output with `out_dim` columns.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer::forward",
                expected: format!("{} input columns", self.in_dim()),
                actual: format!("{} input columns", x.cols()),
            });
        }
        let mut y = Matrix::zeros(x.rows(), self.out_dim());
        for b in 0..x.rows() {
            let xb = x.row(b);
            let yb = y.row_mut(b);
            for (o, out) in yb.iter_mut().enumerate() {
                let wrow = self.weights.row(o);
                let mut acc = self.bias[o];
                for (w, xi) in wrow.iter().zip(xb) {
                    acc = w.mul_add(*xi, acc);
                }
                *out = acc;
            }
        }
        Ok(y)
    }

    /// Exact reverse-mode gradients of the affine map.
    ///
    /// `grad_out` must match the forward output shape and `cached_x` the
    /// forward input.
    pub fn backward(&self, grad_out: &Matrix, cached_x: &Matrix) -> Result<DenseBackward> {
        if grad_out.cols() != self.out_dim()
            || cached_x.cols() != self.in_dim()
            || grad_out.rows() != cached_x.rows()
        {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer::backward",
                expected: format!(
                    "grad {}x{}, input {}x{}",
                    cached_x.rows(),
                    self.out_dim(),
                    cached_x.rows(),
                    self.in_dim()
                ),
                actual: format!(
                    "grad {}x{}, input {}x{}",
                    grad_out.rows(),
                    grad_out.cols(),
                    cached_x.rows(),
                    cached_x.cols()
                ),
            });
        }
        let mut grad_input = Matrix::zeros(cached_x.rows(), self.in_dim());
        let mut grad_weights = Matrix::zeros(self.out_dim(), self.in_dim());
        let mut grad_bias = vec![0.0; self.out_dim()];

        for b in 0..grad_out.rows() {
            let gb = grad_out.row(b);
            let xb = cached_x.row(b);
            let gx = grad_input.row_mut(b);
            for (o, &g) in gb.iter().enumerate() {
                grad_bias[o] += g;
                let wrow = self.weights.row(o);
                for (gxi, w) in gx.iter_mut().zip(wrow) {
                    *gxi = g.mul_add(*w, *gxi);
                }
                let gw = grad_weights.row_mut(o);
                for (gwi, xi) in gw.iter_mut().zip(xb) {
                    *gwi = g.mul_add(*xi, *gwi);
                }
            }
        }
        Ok(DenseBackward {
            grad_input,
            grad_weights,
            grad_bias,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_weights_pass_input_through() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let layer = DenseLayer::new(w, vec![0.0, 0.0]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_affine_map() {
        // x=[[1,1]], W=[[2,3]], b=[1] -> [[6]]
        let layer =
            DenseLayer::new(Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap(), vec![1.0]).unwrap();
        let y = layer
            .forward(&Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
            .unwrap();
        assert_eq!(y.get(0, 0), 6.0);
    }

    #[test]
    fn empty_batch_yields_empty_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::init(3, 4, InitScheme::Xavier, &mut rng).unwrap();
        let y = layer.forward(&Matrix::zeros(0, 3)).unwrap();
        assert_eq!(y.rows(), 0);
        assert_eq!(y.cols(), 4);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::init(3, 4, InitScheme::Xavier, &mut rng).unwrap();
        assert!(layer.forward(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::init(3, 2, InitScheme::Xavier, &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let g = layer.backward(&Matrix::zeros(1, 2), &x).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weights.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule_case() {
        // x=[[3]], W=[[2]], grad_out=[[1]] -> grad_x=[[2]], grad_W=[[3]], grad_b=[1]
        let layer = DenseLayer::new(Matrix::from_rows(&[vec![2.0]]).unwrap(), vec![0.0]).unwrap();
        let x = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let g = layer
            .backward(&Matrix::from_rows(&[vec![1.0]]).unwrap(), &x)
            .unwrap();
        assert_eq!(g.grad_input.get(0, 0), 2.0);
        assert_eq!(g.grad_weights.get(0, 0), 3.0);
        assert_eq!(g.grad_bias[0], 1.0);
    }
}
