//! Inverted dropout: train-time masking with `1/(1-rate)` scaling of the
//! survivors so that inference is an exact identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dropout configuration; the rate must stay strictly below 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }
}

/// Per-entry multiplier applied in the forward pass: 0 for dropped entries,
/// `1/(1-rate)` for survivors. Reused verbatim by the backward pass.
#[derive(Debug)]
pub struct DropoutMask {
    pub scale: Matrix,
}

pub fn dropout_train(x: &Matrix, spec: DropoutSpec, rng: &mut ChaCha8Rng) -> (Matrix, DropoutMask) {
    if spec.rate == 0.0 {
        return (
            x.clone(),
            DropoutMask {
                scale: Matrix::from_fn(x.rows(), x.cols(), |_, _| 1.0),
            },
        );
    }
    let keep_scale = 1.0 / (1.0 - spec.rate);
    let scale = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
        if rng.gen::<f64>() < spec.rate {
            0.0
        } else {
            keep_scale
        }
    });
    let mut y = x.clone();
    for (v, s) in y.data_mut().iter_mut().zip(scale.data()) {
        *v *= s;
    }
    (y, DropoutMask { scale })
}

/// Inference is the identity.
pub fn dropout_infer(x: &Matrix) -> Matrix {
    x.clone()
}

pub fn dropout_backward(grad_out: &Matrix, mask: &DropoutMask) -> Matrix {
    let mut g = grad_out.clone();
    for (v, s) in g.data_mut().iter_mut().zip(mask.scale.data()) {
        *v *= s;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn infer_mode_is_identity() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(dropout_infer(&x), x);
    }

    #[test]
    fn rate_zero_train_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]).unwrap();
        let (y, _) = dropout_train(&x, DropoutSpec::new(0.0).unwrap(), &mut rng);
        assert_eq!(y, x);
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DropoutSpec::new(-0.1).is_err());
    }

    #[test]
    fn survivor_fraction_close_to_keep_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Matrix::from_fn(1000, 1000, |_, _| 1.0);
        let (y, _) = dropout_train(&x, DropoutSpec::new(0.5).unwrap(), &mut rng);
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let fraction = survivors as f64 / 1e6;
        assert!((0.495..=0.505).contains(&fraction), "fraction {fraction}");
        // Survivors carry the inverted-dropout scale.
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_reuses_the_forward_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_fn(4, 4, |r, c| (r * 4 + c) as f64 + 1.0);
        let (y, mask) = dropout_train(&x, DropoutSpec::new(0.5).unwrap(), &mut rng);
        let grad = Matrix::from_fn(4, 4, |_, _| 1.0);
        let gx = dropout_backward(&grad, &mask);
        // Entries dropped in the forward pass block the gradient too.
        for (gy, (yv, xv)) in gx.data().iter().zip(y.data().iter().zip(x.data())) {
            if *yv == 0.0 {
                assert_eq!(*gy, 0.0);
            } else {
                assert_eq!(*gy, yv / xv);
            }
        }
    }
}
