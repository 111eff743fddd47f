//! Seeded uniform parameter initialization.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in `±sqrt(6/fan_in)`; used for layers feeding a ReLU.
    FanInRelu,
    /// Uniform in `±sqrt(6/(fan_in + fan_out))`; used for the linear
    /// classifiers and the sigmoid output layer.
    Xavier,
}

/// Draws a `(out_dim, in_dim)` weight matrix. `fan_in = in_dim`,
/// `fan_out = out_dim`. Deterministic for a given generator state.
pub fn init_params(
    out_dim: usize,
    in_dim: usize,
    scheme: InitScheme,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    if out_dim == 0 || in_dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "init_params needs positive dimensions, got {out_dim}x{in_dim}"
        )));
    }
    let limit = match scheme {
        InitScheme::FanInRelu => (6.0 / in_dim as f64).sqrt(),
        InitScheme::Xavier => (6.0 / (in_dim + out_dim) as f64).sqrt(),
    };
    let dist = Uniform::new_inclusive(-limit, limit);
    Ok(Matrix::from_fn(out_dim, in_dim, |_, _| dist.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_seed_gives_bit_identical_matrices() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let ma = init_params(7, 5, InitScheme::FanInRelu, &mut a).unwrap();
        let mb = init_params(7, 5, InitScheme::FanInRelu, &mut b).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn fan_in_six_bounds_entries_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = init_params(100, 6, InitScheme::FanInRelu, &mut rng).unwrap();
        assert!(m.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn empirical_mean_is_close_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = init_params(1000, 100, InitScheme::Xavier, &mut rng).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_params(0, 3, InitScheme::Xavier, &mut rng).is_err());
        assert!(init_params(3, 0, InitScheme::Xavier, &mut rng).is_err());
    }
}
