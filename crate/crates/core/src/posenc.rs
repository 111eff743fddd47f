//! Geographic positional encoding.
//!
//! A coordinate pair is mapped to a fixed multi-frequency sin/cos vector:
//! for each coordinate value `c` (latitude first, then longitude) and pair
//! index `i in 0..d/2`,
//!
//! ```text
//! out[2i]   = sin(scale * c * base^(-2i/d))
//! out[2i+1] = cos(scale * c * base^(-2i/d))
//! ```
//!
//! and the two length-`d` blocks are concatenated to a length-`2d` vector.
//! Raw degree values are fed to sin/cos without radian conversion; the
//! `coord_scale` multiplier is exposed for sensitivity experiments.
//!
//! A trainable two-layer MLP head (`2d -> hidden -> 2d`, batch norm and ReLU
//! after the first layer, sigmoid at the output) turns the fixed encoding
//! into the final positional representation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    dropout_train, relu, relu_backward, sigmoid, sigmoid_backward, BatchNormCache, BatchNormLayer,
    DenseLayer, DropoutMask, DropoutSpec, InitScheme,
};

/// A validated latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    lat_deg: f64,
    lon_deg: f64,
}

impl GeoCoordinate {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        let valid = lat_deg.is_finite()
            && lon_deg.is_finite()
            && (-90.0..=90.0).contains(&lat_deg)
            && (-180.0..=180.0).contains(&lon_deg);
        if !valid {
            return Err(Error::InvalidCoordinate {
                lat: lat_deg,
                lon: lon_deg,
            });
        }
        Ok(Self { lat_deg, lon_deg })
    }

    #[inline]
    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    #[inline]
    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

/// Configuration of the fixed encoding. `half_dim` is the per-coordinate
/// encoding length `d`; the full output has length `2d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosEncConfig {
    pub half_dim: usize,
    pub base: f64,
    pub coord_scale: f64,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        Self {
            half_dim: 64,
            base: 1e4,
            coord_scale: 1.0,
        }
    }
}

impl PosEncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.half_dim < 2 || !self.half_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "positional half_dim must be even and >= 2, got {}",
                self.half_dim
            )));
        }
        if !self.base.is_finite() || self.base <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "positional base must be finite and > 1, got {}",
                self.base
            )));
        }
        if !self.coord_scale.is_finite() {
            return Err(Error::InvalidConfig("coord_scale must be finite".into()));
        }
        Ok(())
    }

    /// Length of the full encoding `[lat block | lon block]`.
    #[inline]
    pub fn output_dim(&self) -> usize {
        2 * self.half_dim
    }
}

/// The fixed (non-trainable) encoding of one coordinate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEncoding {
    values: Vec<f64>,
}

impl FixedEncoding {
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn encode_scalar(value: f64, cfg: &PosEncConfig, out: &mut Vec<f64>) {
    let d = cfg.half_dim as f64;
    let scaled = cfg.coord_scale * value;
    for i in 0..cfg.half_dim / 2 {
        let freq = cfg.base.powf(-2.0 * i as f64 / d);
        let arg = scaled * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
}

/// Computes the fixed sin/cos encoding of a coordinate pair.
pub fn fixed_encode(coord: GeoCoordinate, cfg: &PosEncConfig) -> Result<FixedEncoding> {
    cfg.validate()?;
    let mut values = Vec::with_capacity(cfg.output_dim());
    encode_scalar(coord.lat_deg, cfg, &mut values);
    encode_scalar(coord.lon_deg, cfg, &mut values);
    Ok(FixedEncoding { values })
}

/// Fixed encodings for a batch of coordinates, one row per coordinate.
pub fn fixed_encode_batch(coords: &[GeoCoordinate], cfg: &PosEncConfig) -> Result<Matrix> {
    cfg.validate()?;
    let mut m = Matrix::zeros(coords.len(), cfg.output_dim());
    for (r, coord) in coords.iter().enumerate() {
        let enc = fixed_encode(*coord, cfg)?;
        m.row_mut(r).copy_from_slice(enc.values());
    }
    Ok(m)
}

/// Concatenates a feature vector with a positional vector, features first.
pub fn concat_features(x: &[f64], p: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + p.len());
    out.extend_from_slice(x);
    out.extend_from_slice(p);
    out
}

/// Trainable MLP head mapping the fixed encoding to the final positional
/// representation. Output components lie strictly in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedPositionalEncoder {
    pub dense1: DenseLayer,
    pub bn1: BatchNormLayer,
    pub dense2: DenseLayer,
    pub dropout_rate: f64,
}

/// Intermediate activations of one train-mode pass, kept for the backward.
#[derive(Debug)]
pub struct PeCache {
    input: Matrix,
    pre_bn: Matrix,
    bn_cache: BatchNormCache,
    bn_out: Matrix,
    mask: DropoutMask,
    dense2_in: Matrix,
    output: Matrix,
}

/// Parameter gradients of the head.
#[derive(Debug)]
pub struct PeGrads {
    pub dense1_w: Matrix,
    pub dense1_b: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub dense2_w: Matrix,
    pub dense2_b: Vec<f64>,
}

impl LearnedPositionalEncoder {
    /// Fresh head with `2d -> hidden -> 2d` layers. The first layer feeds a
    /// ReLU and uses fan-in init; the sigmoid output layer uses Xavier.
    pub fn init(
        enc_dim: usize,
        hidden: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        DropoutSpec::new(dropout_rate)?;
        Ok(Self {
            dense1: DenseLayer::init(enc_dim, hidden, InitScheme::FanInRelu, rng)?,
            bn1: BatchNormLayer::new(hidden),
            dense2: DenseLayer::init(hidden, enc_dim, InitScheme::Xavier, rng)?,
            dropout_rate,
        })
    }

    #[inline]
    pub fn enc_dim(&self) -> usize {
        self.dense1.in_dim()
    }

    /// Train-mode pass over a batch of fixed encodings (rows).
    pub fn forward_train(
        &mut self,
        enc: &Matrix,
        rng: &mut ChaCha8Rng,
        update_running: bool,
    ) -> Result<(Matrix, PeCache)> {
        let pre_bn = self.dense1.forward(enc)?;
        let (bn_out, bn_cache) = self.bn1.forward_train(&pre_bn, update_running)?;
        let act = relu(&bn_out);
        let (dense2_in, mask) = dropout_train(
            &act,
            DropoutSpec {
                rate: self.dropout_rate,
            },
            rng,
        );
        let pre_sig = self.dense2.forward(&dense2_in)?;
        let output = sigmoid(&pre_sig);
        Ok((
            output.clone(),
            PeCache {
                input: enc.clone(),
                pre_bn,
                bn_cache,
                bn_out,
                mask,
                dense2_in,
                output,
            },
        ))
    }

    /// Deterministic infer-mode pass (running statistics, no dropout).
    pub fn forward_infer(&self, enc: &Matrix) -> Result<Matrix> {
        let h = self.bn1.forward_infer(&self.dense1.forward(enc)?)?;
        let h = relu(&h);
        Ok(sigmoid(&self.dense2.forward(&h)?))
    }

    /// Backward through sigmoid, dense2, dropout, ReLU, batch norm, dense1.
    pub fn backward(&self, grad_out: &Matrix, cache: &PeCache) -> Result<PeGrads> {
        let d_pre_sig = sigmoid_backward(grad_out, &cache.output);
        let d2 = self.dense2.backward(&d_pre_sig, &cache.dense2_in)?;
        let d_act = crate::nn::dropout_backward(&d2.grad_input, &cache.mask);
        let d_bn_out = relu_backward(&d_act, &cache.bn_out);
        let (d_pre_bn, g_gamma, g_beta) = self.bn1.backward(&d_bn_out, &cache.bn_cache)?;
        debug_assert_eq!(d_pre_bn.cols(), cache.pre_bn.cols());
        let d1 = self.dense1.backward(&d_pre_bn, &cache.input)?;
        Ok(PeGrads {
            dense1_w: d1.grad_weights,
            dense1_b: d1.grad_bias,
            bn1_gamma: g_gamma,
            bn1_beta: g_beta,
            dense2_w: d2.grad_weights,
            dense2_b: d2.grad_bias,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn cfg(d: usize) -> PosEncConfig {
        PosEncConfig {
            half_dim: d,
            base: 1e4,
            coord_scale: 1.0,
        }
    }

    /// Independent scalar evaluation of the encoding formula, arranged
    /// differently from the implementation (exp/ln instead of powf).
    fn oracle_encode(lat: f64, lon: f64, d: usize, base: f64, scale: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for &coord in &[lat, lon] {
            for i in 0..d / 2 {
                let exponent = -(2.0 * i as f64) / d as f64;
                let freq = (exponent * base.ln()).exp();
                out.push((scale * coord * freq).sin());
                out.push((scale * coord * freq).cos());
            }
        }
        out
    }

    #[test]
    fn zero_coordinate_alternates_zero_one() {
        let enc = fixed_encode(GeoCoordinate::new(0.0, 0.0).unwrap(), &cfg(8)).unwrap();
        assert_eq!(
            enc.values(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn raw_degree_convention_at_ninety_degrees() {
        // First pair is sin/cos of the raw value 90 (no radian conversion).
        let enc = fixed_encode(GeoCoordinate::new(90.0, 0.0).unwrap(), &cfg(64)).unwrap();
        assert!(
            (enc.values()[0] - 0.89399666).abs() < 1e-8,
            "{}",
            enc.values()[0]
        );
        assert!(
            (enc.values()[1] - (-0.44807362)).abs() < 1e-8,
            "{}",
            enc.values()[1]
        );
    }

    #[test]
    fn matches_independent_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let lat = rng.gen_range(34.0..72.0);
            let lon = rng.gen_range(-11.0..35.0);
            let enc = fixed_encode(GeoCoordinate::new(lat, lon).unwrap(), &cfg(32)).unwrap();
            let oracle = oracle_encode(lat, lon, 32, 1e4, 1.0);
            for (a, b) in enc.values().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frequency_argument_magnitude_decreases() {
        let c = cfg(16);
        let phi: f64 = 48.2;
        let mut prev = f64::INFINITY;
        for i in 0..c.half_dim / 2 {
            let arg = (phi * c.base.powf(-2.0 * i as f64 / c.half_dim as f64)).abs();
            assert!(arg < prev);
            prev = arg;
        }
    }

    #[test]
    fn entries_bounded_with_unit_pythagorean_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let lat = rng.gen_range(-90.0..90.0);
            let lon = rng.gen_range(-180.0..180.0);
            let enc = fixed_encode(GeoCoordinate::new(lat, lon).unwrap(), &cfg(16)).unwrap();
            for v in enc.values() {
                assert!((-1.0..=1.0).contains(v));
            }
            for pair in enc.values().chunks(2) {
                assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distinct_grid_points_have_distinct_encodings() {
        // 0.01-degree spacing within EU-like bounds.
        let c = cfg(16);
        let mut encs = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let lat = 45.0 + 0.01 * i as f64;
                let lon = 5.0 + 0.01 * j as f64;
                encs.push(
                    fixed_encode(GeoCoordinate::new(lat, lon).unwrap(), &c)
                        .unwrap()
                        .into_values(),
                );
            }
        }
        for a in 0..encs.len() {
            for b in (a + 1)..encs.len() {
                let max_diff = encs[a]
                    .iter()
                    .zip(&encs[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(max_diff > 1e-9, "encodings {a} and {b} collide");
            }
        }
    }

    #[test]
    fn latitude_block_is_isolated() {
        let c = cfg(16);
        let a = fixed_encode(GeoCoordinate::new(40.0, 10.0).unwrap(), &c).unwrap();
        let b = fixed_encode(GeoCoordinate::new(55.0, 10.0).unwrap(), &c).unwrap();
        let d = c.half_dim;
        assert_ne!(&a.values()[..d], &b.values()[..d]);
        assert_eq!(&a.values()[d..], &b.values()[d..]);
    }

    #[test]
    fn out_of_range_coordinates_are_rejected() {
        assert!(GeoCoordinate::new(90.5, 0.0).is_err());
        assert!(GeoCoordinate::new(0.0, -180.5).is_err());
        assert!(GeoCoordinate::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn concat_keeps_features_first() {
        assert_eq!(
            concat_features(&[1.0, 2.0], &[0.5, 0.5]),
            vec![1.0, 2.0, 0.5, 0.5]
        );
        assert_eq!(concat_features(&[1.0, 2.0], &[]), vec![1.0, 2.0]);
        let x = vec![0.0; 109];
        let p = vec![0.0; 128];
        assert_eq!(concat_features(&x, &p).len(), 237);
    }

    #[test]
    fn infer_mode_is_pure_and_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = LearnedPositionalEncoder::init(8, 16, 0.5, &mut rng).unwrap();
        let enc = fixed_encode_batch(&[GeoCoordinate::new(48.0, 16.0).unwrap()], &cfg(4)).unwrap();
        let a = head.forward_infer(&enc).unwrap();
        let b = head.forward_infer(&enc).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_weight_head_outputs_one_half_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = LearnedPositionalEncoder::init(8, 16, 0.0, &mut rng).unwrap();
        head.dense1.weights.data_mut().fill(0.0);
        head.dense1.bias.fill(0.0);
        head.dense2.weights.data_mut().fill(0.0);
        head.dense2.bias.fill(0.0);
        let enc = fixed_encode_batch(
            &[
                GeoCoordinate::new(48.0, 16.0).unwrap(),
                GeoCoordinate::new(40.0, -3.0).unwrap(),
            ],
            &cfg(4),
        )
        .unwrap();
        // Train mode: batch norm sees zero activations, outputs zero pre-affine.
        let (p, _) = head.forward_train(&enc, &mut rng, false).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        // Infer mode with fresh running stats agrees.
        let p = head.forward_infer(&enc).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }
}
