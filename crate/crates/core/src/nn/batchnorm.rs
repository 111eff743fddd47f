//! Batch normalization over feature columns with running statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved per-batch quantities needed by the train-mode backward pass.
#[derive(Debug)]
pub struct BatchNormCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            eps: BATCHNORM_EPS,
            momentum: BATCHNORM_MOMENTUM,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn check_width(&self, x: &Matrix, context: &'static str) -> Result<()> {
        if x.cols() != self.width() {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{} columns", self.width()),
                actual: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    /// Normalizes with batch statistics (population variance) and, when
    /// `update_running` is set, folds them into the running estimates via
    /// `running = (1 - momentum) * running + momentum * batch`.
    ///
    /// Rejects batches of fewer than two rows: variance normalization over a
    /// single sample is undefined.
    pub fn forward_train(
        &mut self,
        x: &Matrix,
        update_running: bool,
    ) -> Result<(Matrix, BatchNormCache)> {
        self.check_width(x, "BatchNormLayer::forward_train")?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall { size: n });
        }
        let width = self.width();
        let nf = n as f64;

        let mut mean = vec![0.0; width];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nf;
        }
        let mut var = vec![0.0; width];
        for r in 0..n {
            for (c, v) in x.row(r).iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        for v in &mut var {
            *v /= nf;
        }

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = Matrix::zeros(n, width);
        let mut y = Matrix::zeros(n, width);
        for r in 0..n {
            let xr = x.row(r);
            for c in 0..width {
                let h = (xr[c] - mean[c]) * inv_std[c];
                x_hat.set(r, c, h);
                y.set(r, c, self.gamma[c] * h + self.beta[c]);
            }
        }

        if update_running {
            for c in 0..width {
                self.running_mean[c] =
                    (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                self.running_var[c] =
                    (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c];
            }
        }

        Ok((y, BatchNormCache { x_hat, inv_std }))
    }

    /// Normalizes with the stored running statistics; pure.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x, "BatchNormLayer::forward_infer")?;
        let width = self.width();
        let mut y = Matrix::zeros(x.rows(), width);
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + self.eps).sqrt())
            .collect();
        for r in 0..x.rows() {
            let xr = x.row(r);
            for c in 0..width {
                let h = (xr[c] - self.running_mean[c]) * inv_std[c];
                y.set(r, c, self.gamma[c] * h + self.beta[c]);
            }
        }
        Ok(y)
    }

    /// Train-mode backward: accounts for the batch coupling through the
    /// per-column mean and variance.
    pub fn backward(
        &self,
        grad_out: &Matrix,
        cache: &BatchNormCache,
    ) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        self.check_width(grad_out, "BatchNormLayer::backward")?;
        let n = grad_out.rows();
        let width = self.width();
        let nf = n as f64;

        let mut grad_gamma = vec![0.0; width];
        let mut grad_beta = vec![0.0; width];
        // Column sums of d_xhat and d_xhat * x_hat for the coupled terms.
        let mut sum_dxhat = vec![0.0; width];
        let mut sum_dxhat_xhat = vec![0.0; width];
        for r in 0..n {
            let g = grad_out.row(r);
            let h = cache.x_hat.row(r);
            for c in 0..width {
                grad_gamma[c] += g[c] * h[c];
                grad_beta[c] += g[c];
                let dxh = g[c] * self.gamma[c];
                sum_dxhat[c] += dxh;
                sum_dxhat_xhat[c] += dxh * h[c];
            }
        }

        let mut grad_x = Matrix::zeros(n, width);
        for r in 0..n {
            let g = grad_out.row(r);
            let h = cache.x_hat.row(r);
            let gx = grad_x.row_mut(r);
            for c in 0..width {
                let dxh = g[c] * self.gamma[c];
                gx[c] =
                    cache.inv_std[c] / nf * (nf * dxh - sum_dxhat[c] - h[c] * sum_dxhat_xhat[c]);
            }
        }
        Ok((grad_x, grad_gamma, grad_beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column_mean_var(m: &Matrix, c: usize) -> (f64, f64) {
        let n = m.rows() as f64;
        let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
        let var = (0..m.rows())
            .map(|r| (m.get(r, c) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }

    #[test]
    fn train_mode_normalizes_per_column() {
        // Columns with large variance so the eps bias is negligible.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Matrix::from_fn(64, 5, |_, _| rng.gen_range(-50.0..50.0));
        let mut bn = BatchNormLayer::new(5);
        let (y, _) = bn.forward_train(&x, true).unwrap();
        for c in 0..5 {
            let (mean, var) = column_mean_var(&y, c);
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "column {c} var {var}");
        }
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let x = Matrix::from_fn(8, 2, |_, c| if c == 0 { 3.5 } else { 1.0 });
        let mut bn = BatchNormLayer::new(2);
        let (y, _) = bn.forward_train(&x, false).unwrap();
        assert!(y.is_finite());
        for r in 0..8 {
            assert_eq!(y.get(r, 0), 0.0);
            assert_eq!(y.get(r, 1), 0.0);
        }
    }

    #[test]
    fn single_row_batch_is_rejected_in_train_mode() {
        let mut bn = BatchNormLayer::new(3);
        let err = bn.forward_train(&Matrix::zeros(1, 3), false).unwrap_err();
        assert!(matches!(err, Error::BatchTooSmall { size: 1 }));
    }

    #[test]
    fn infer_with_unit_stats_is_nearly_identity() {
        let bn = BatchNormLayer::new(3);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let y = bn.forward_infer(&x).unwrap();
        // Off only by the 1/sqrt(1+eps) factor.
        let factor = 1.0 / (1.0f64 + BATCHNORM_EPS).sqrt();
        for c in 0..3 {
            assert!((y.get(0, c) - x.get(0, c) * factor).abs() < 1e-15);
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let x = Matrix::from_fn(16, 1, |r, _| r as f64);
        let mut bn = BatchNormLayer::new(1);
        bn.forward_train(&x, true).unwrap();
        let (mean, var) = column_mean_var(&x, 0);
        assert!((bn.running_mean[0] - BATCHNORM_MOMENTUM * mean).abs() < 1e-12);
        let expected = (1.0 - BATCHNORM_MOMENTUM) * 1.0 + BATCHNORM_MOMENTUM * var;
        assert!((bn.running_var[0] - expected).abs() < 1e-12);
    }
}
